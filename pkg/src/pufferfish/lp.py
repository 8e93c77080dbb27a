"""Dense two-phase simplex with Bland's anti-cycling rule.

Meant for the small programs of the NfC audit (a few dozen variables).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from pufferfish.errors import ValidationError

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
TOL = 1e-9
MAX_VARIABLES = 512


@dataclass(frozen=True)
class LPResult:
    status: str
    value: float
    x: np.ndarray | None


def _pivot(T: np.ndarray, row: int, col: int) -> None:
    T[row] /= T[row, col]
    for r in range(T.shape[0]):
        if r != row and T[r, col] != 0.0:
            T[r] -= T[r, col] * T[row]


def _simplex(T: np.ndarray, basis: list[int], allowed: np.ndarray, tol: float) -> str:
    """Minimise the objective in the last row of T; Bland's rule for entering and leaving."""
    m = T.shape[0] - 1
    for _ in range(50_000):
        cost = T[-1, :-1]
        candidates = np.flatnonzero((cost < -tol) & allowed)
        if candidates.size == 0:
            return OPTIMAL
        col = int(candidates[0])
        column = T[:m, col]
        positive = column > tol
        if not positive.any():
            return UNBOUNDED
        ratios = np.full(m, np.inf)
        ratios[positive] = T[:m, -1][positive] / column[positive]
        best = ratios.min()
        ties = np.flatnonzero(ratios <= best + tol * max(1.0, abs(best)))
        row = int(min(ties, key=lambda r: basis[r]))
        _pivot(T, row, col)
        basis[row] = col
    raise RuntimeError("simplex iteration limit reached")


def lp_solve(
    c: Sequence[float],
    A_ub: Sequence[Sequence[float]] | None = None,
    b_ub: Sequence[float] | None = None,
    A_eq: Sequence[Sequence[float]] | None = None,
    b_eq: Sequence[float] | None = None,
    maximize: bool = False,
    free: Sequence[int] | None = None,
    tol: float = TOL,
) -> LPResult:
    """Optimise c.x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0 except ``free`` indices.

    Returns status OPTIMAL, INFEASIBLE or UNBOUNDED. For an unbounded program the
    value is +inf when maximising and -inf when minimising.
    """
    c = np.asarray(c, dtype=float).ravel()
    n = c.size
    if n > MAX_VARIABLES:
        raise ValidationError(f"at most {MAX_VARIABLES} variables are supported")
    A_ub = np.zeros((0, n)) if A_ub is None else np.atleast_2d(np.asarray(A_ub, dtype=float))
    b_ub = np.zeros(0) if b_ub is None else np.asarray(b_ub, dtype=float).ravel()
    A_eq = np.zeros((0, n)) if A_eq is None else np.atleast_2d(np.asarray(A_eq, dtype=float))
    b_eq = np.zeros(0) if b_eq is None else np.asarray(b_eq, dtype=float).ravel()
    if A_ub.shape != (b_ub.size, n) or A_eq.shape != (b_eq.size, n):
        raise ValidationError("constraint shapes do not match")
    free = sorted(set(int(i) for i in (free or [])))

    # split free variables into x+ - x-
    split = np.eye(n)
    if free:
        split = np.hstack([split, -np.eye(n)[:, free]])
    cs = split.T @ c
    if maximize:
        cs = -cs
    Aub, Aeq = A_ub @ split, A_eq @ split
    nv = split.shape[1]
    m_ub, m_eq = Aub.shape[0], Aeq.shape[0]
    m = m_ub + m_eq
    ns = nv + m_ub  # structural plus slack columns
    A = np.zeros((m, ns))
    A[:m_ub, :nv] = Aub
    A[:m_ub, nv:] = np.eye(m_ub)
    A[m_ub:, :nv] = Aeq
    rhs = np.concatenate([b_ub, b_eq])
    neg = rhs < 0
    A[neg] *= -1
    rhs = np.abs(rhs)

    # phase 1 with one artificial per row
    T = np.zeros((m + 1, ns + m + 1))
    T[:m, :ns] = A
    T[:m, ns:ns + m] = np.eye(m)
    T[:m, -1] = rhs
    T[-1, :ns] = -A.sum(axis=0)
    T[-1, -1] = -rhs.sum()
    basis = list(range(ns, ns + m))
    allowed = np.ones(ns + m, dtype=bool)
    _simplex(T, basis, allowed, tol)
    if -T[-1, -1] > tol * max(1.0, float(rhs.sum())):
        return LPResult(INFEASIBLE, float("nan"), None)

    # drive remaining artificials out of the basis; drop redundant rows
    keep = []
    for r in range(m):
        if basis[r] >= ns:
            row = T[r, :ns]
            nz = np.flatnonzero(np.abs(row) > tol)
            if nz.size:
                _pivot(T, r, int(nz[0]))
                basis[r] = int(nz[0])
                keep.append(r)
        else:
            keep.append(r)
    T2 = np.zeros((len(keep) + 1, ns + 1))
    T2[:-1, :ns] = T[keep, :ns]
    T2[:-1, -1] = T[keep, -1]
    basis = [basis[r] for r in keep]
    cfull = np.concatenate([cs, np.zeros(m_ub)])
    T2[-1, :ns] = cfull
    T2[-1, -1] = 0.0
    for r, j in enumerate(basis):
        if T2[-1, j] != 0.0:
            T2[-1] -= T2[-1, j] * T2[r]
    status = _simplex(T2, basis, np.ones(ns, dtype=bool), tol)
    if status == UNBOUNDED:
        return LPResult(UNBOUNDED, np.inf if maximize else -np.inf, None)
    xs = np.zeros(ns)
    for r, j in enumerate(basis):
        xs[j] = T2[r, -1]
    x = split @ xs[:nv]
    value = float(c @ x)
    return LPResult(OPTIMAL, value, x)
