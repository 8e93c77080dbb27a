"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class NumericError(ArithmeticError):
    """A numerical routine failed (singular system, no convergence)."""


class BudgetExhaustedError(RuntimeError):
    """The privacy budget left in a ledger cannot cover a request."""


class IntegrityError(RuntimeError):
    """Observed outputs cannot have come from the honest mechanism."""
