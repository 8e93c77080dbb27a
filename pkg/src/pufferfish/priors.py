"""Prior families over finite tabular datasets.

Three families are supported: finite Markov chains, Gaussian vectors with a
squared-exponential covariance, and explicit finite tables. Secrets are pairs
of mutually exclusive predicates over datasets.
"""

from __future__ import annotations

import csv
import itertools
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Iterable, Sequence

import numpy as np

from pufferfish.errors import NumericError, ValidationError

DEFAULT_TAU = 1e-5
MAX_POWER_ITERATIONS = 1_000_000
POWER_TOLERANCE = 1e-12
EIGEN_FALLBACK_STATES = 64
MAX_GAUSSIAN_DIM = 512


def _readonly(array: np.ndarray) -> np.ndarray:
    array = np.array(array, dtype=float, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True)
class TransitionMatrix:
    """Row-stochastic matrix of a time-homogeneous Markov chain."""

    rows: np.ndarray

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim != 2 or rows.shape[0] != rows.shape[1] or rows.shape[0] == 0:
            raise ValidationError(f"transition matrix must be square, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise ValidationError("transition matrix has non-finite entries")
        if np.any(rows < 0):
            raise ValidationError("transition matrix has negative entries")
        sums = rows.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > 1e-12:
            raise ValidationError(f"rows must sum to 1, got {sums}")
        object.__setattr__(self, "rows", _readonly(rows))

    @property
    def size(self) -> int:
        return self.rows.shape[0]

    @classmethod
    def binary(cls, p: float, q: float) -> "TransitionMatrix":
        """Two-state chain that stays in 0 w.p. p and in 1 w.p. q."""
        if not (0.0 <= p <= 1.0 and 0.0 <= q <= 1.0):
            raise ValidationError(f"p and q must lie in [0, 1], got {p}, {q}")
        return cls(np.array([[p, 1.0 - p], [1.0 - q, q]]))

    def to_json(self, length: int | None = None) -> dict[str, Any]:
        doc: dict[str, Any] = {"kind": "markov", "states": self.size, "rows": self.rows.tolist()}
        if length is not None:
            doc["length"] = int(length)
        return doc


@dataclass(frozen=True)
class MarkovChainPrior:
    """Markov chain of fixed length; the initial law defaults to stationary."""

    transition: TransitionMatrix
    length: int
    initial: np.ndarray | None = None

    def __post_init__(self) -> None:
        if int(self.length) < 1:
            raise ValidationError(f"chain length must be positive, got {self.length}")
        if self.initial is None:
            initial = stationary_distribution(self.transition)
        else:
            initial = np.asarray(self.initial, dtype=float)
            if initial.shape != (self.transition.size,):
                raise ValidationError("initial distribution has the wrong size")
            if np.any(initial < 0) or abs(initial.sum() - 1.0) > 1e-12:
                raise ValidationError("initial distribution must be a probability vector")
        object.__setattr__(self, "length", int(self.length))
        object.__setattr__(self, "initial", _readonly(initial))

    @property
    def states(self) -> int:
        return self.transition.size

    def to_json(self) -> dict[str, Any]:
        return self.transition.to_json(self.length)


@dataclass(frozen=True)
class GaussianPrior:
    """Zero-mean Gaussian with covariance exp(-(j-k)^2 / lengthscale), truncated to [-gamma, gamma]^n."""

    n: int
    lengthscale: float
    gamma: float
    covariance: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if not 1 <= int(self.n) <= MAX_GAUSSIAN_DIM:
            raise ValidationError(f"dimension must lie in [1, {MAX_GAUSSIAN_DIM}], got {self.n}")
        if not self.lengthscale > 0:
            raise ValidationError("lengthscale must be positive")
        if not self.gamma > 0:
            raise ValidationError("gamma must be positive")
        idx = np.arange(int(self.n), dtype=float)
        cov = np.exp(-((idx[:, None] - idx[None, :]) ** 2) / float(self.lengthscale))
        try:
            np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise NumericError(
                f"covariance is not positive definite (condition number {np.linalg.cond(cov):.3e})"
            ) from exc
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "covariance", _readonly(cov))

    def to_json(self) -> dict[str, Any]:
        return {"kind": "gaussian", "n": self.n, "lengthscale": self.lengthscale, "gamma": self.gamma}


@dataclass(frozen=True)
class ExplicitPrior:
    """Finite list of datasets with matching probabilities."""

    datasets: tuple
    probs: np.ndarray

    def __post_init__(self) -> None:
        datasets = tuple(self.datasets)
        probs = np.asarray(self.probs, dtype=float)
        if probs.shape != (len(datasets),):
            raise ValidationError("probs must match the number of datasets")
        if len(datasets) == 0:
            raise ValidationError("explicit prior needs at least one dataset")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ValidationError("probs must be a probability vector")
        if len(set(datasets)) != len(datasets):
            raise ValidationError("datasets must be distinct")
        object.__setattr__(self, "datasets", datasets)
        object.__setattr__(self, "probs", _readonly(probs))

    @classmethod
    def uniform(cls, datasets: Iterable[Hashable]) -> "ExplicitPrior":
        datasets = tuple(datasets)
        return cls(datasets, np.full(len(datasets), 1.0 / len(datasets)))

    def mask(self, predicate: Callable[[Any], bool]) -> np.ndarray:
        return np.array([bool(predicate(d)) for d in self.datasets])

    def probability(self, predicate: Callable[[Any], bool]) -> float:
        return float(self.probs[self.mask(predicate)].sum())

    def conditional(self, predicate: Callable[[Any], bool]) -> np.ndarray:
        """Probability vector over all datasets conditioned on the predicate."""
        mask = self.mask(predicate)
        total = self.probs[mask].sum()
        if total <= 0:
            raise ValidationError("conditioning event has zero probability")
        return np.where(mask, self.probs, 0.0) / total


@dataclass(frozen=True)
class SecretPair:
    """Two mutually exclusive statements about a dataset."""

    left: Callable[[Any], bool]
    right: Callable[[Any], bool]
    label: str = ""

    def reversed(self) -> "SecretPair":
        return SecretPair(self.right, self.left, f"reverse({self.label})")

    def check_exclusive(self, datasets: Iterable[Any]) -> None:
        for d in datasets:
            if self.left(d) and self.right(d):
                raise ValidationError(f"dataset {d!r} satisfies both secrets of {self.label!r}")

    @classmethod
    def entry_values(cls, index: int, a: Any, b: Any) -> "SecretPair":
        """Secret pair 'entry index equals a' versus 'entry index equals b'."""
        return cls(
            lambda d, i=index, v=a: d[i] == v,
            lambda d, i=index, v=b: d[i] == v,
            f"x[{index}]={a} vs x[{index}]={b}",
        )

    @classmethod
    def tagged(cls, left_tag: str, right_tag: str) -> "SecretPair":
        """Pair over datasets carrying a ``secrets`` collection of tags."""
        return cls(
            lambda d, t=left_tag: t in d.secrets,
            lambda d, t=right_tag: t in d.secrets,
            f"{left_tag} vs {right_tag}",
        )


def _check_stochastic(P: TransitionMatrix | np.ndarray) -> np.ndarray:
    if isinstance(P, TransitionMatrix):
        return np.asarray(P.rows)
    return np.asarray(TransitionMatrix(np.asarray(P, dtype=float)).rows)


def stationary_distribution(
    P: TransitionMatrix | np.ndarray,
    max_iter: int = MAX_POWER_ITERATIONS,
    tol: float = POWER_TOLERANCE,
) -> np.ndarray:
    """Stationary vector of P by power iteration, with an eigen-solve fallback.

    Iteration stops once the update stalls at machine precision; convergence is
    declared when the residual ||pi P - pi||_inf is at most ``tol``.
    """
    rows = _check_stochastic(P)
    k = rows.shape[0]
    pi = np.full(k, 1.0 / k)
    best = np.inf
    stall = 0
    for _ in range(int(max_iter)):
        nxt = pi @ rows
        nxt /= nxt.sum()
        resid = float(np.max(np.abs(nxt - pi)))
        pi = nxt
        if resid == 0.0:
            break
        if resid < best:
            best, stall = resid, 0
        else:
            stall += 1
            if stall > 50 and best <= tol:
                break
    residual = float(np.max(np.abs(pi @ rows - pi)))
    if residual <= tol:
        return pi
    if k <= EIGEN_FALLBACK_STATES:
        vals, vecs = np.linalg.eig(rows.T)
        j = int(np.argmin(np.abs(vals - 1.0)))
        vec = np.real(vecs[:, j])
        vec = vec / vec.sum()
        if np.all(vec >= -1e-12) and float(np.max(np.abs(vec @ rows - vec))) <= 1e-10:
            return np.clip(vec, 0.0, None) / np.clip(vec, 0.0, None).sum()
    raise NumericError(f"power iteration did not converge (residual {residual:.3e})")


def k_step_transition(P: TransitionMatrix | np.ndarray, k: int) -> np.ndarray:
    """P raised to the k-th power; k = 0 gives the identity."""
    rows = _check_stochastic(P)
    if int(k) < 0:
        raise ValidationError("k must be nonnegative")
    return np.linalg.matrix_power(rows, int(k))


def transition_counts(sequences: Iterable[Sequence[int]], num_states: int) -> np.ndarray:
    counts = np.zeros((num_states, num_states), dtype=np.int64)
    seen = False
    for seq in sequences:
        arr = np.asarray(seq, dtype=np.int64)
        seen = True
        if arr.size and (arr.min() < 0 or arr.max() >= num_states):
            raise ValidationError(f"state ids must lie in [0, {num_states})")
        if arr.size >= 2:
            np.add.at(counts, (arr[:-1], arr[1:]), 1)
    if not seen:
        raise ValidationError("no sequences given")
    return counts


def fit_transition_matrix(sequences: Iterable[Sequence[int]], num_states: int) -> TransitionMatrix:
    """Empirical transition frequencies; rows never left become uniform."""
    if num_states < 1:
        raise ValidationError("num_states must be positive")
    counts = transition_counts(sequences, num_states).astype(float)
    totals = counts.sum(axis=1)
    if totals.sum() == 0:
        raise ValidationError("no transitions observed")
    rows = np.empty_like(counts)
    for i in range(num_states):
        rows[i] = counts[i] / totals[i] if totals[i] > 0 else 1.0 / num_states
    return TransitionMatrix(rows)


def add_other_state(P: TransitionMatrix | np.ndarray) -> np.ndarray:
    """Append an absorbing-free 'other' state: a zero column and a row uniform over the old states."""
    rows = np.asarray(P.rows if isinstance(P, TransitionMatrix) else P, dtype=float)
    k = rows.shape[0]
    out = np.zeros((k + 1, k + 1))
    out[:k, :k] = rows
    out[k, :k] = 1.0 / k
    return out


def smooth_transition_matrix(P: TransitionMatrix | np.ndarray, tau: float = DEFAULT_TAU) -> TransitionMatrix:
    """Raise zero entries to tau and take the added mass proportionally from the rest of the row."""
    rows = np.array(P.rows if isinstance(P, TransitionMatrix) else P, dtype=float)
    if not tau > 0:
        raise ValidationError("tau must be positive")
    out = rows.copy()
    for i, row in enumerate(rows):
        zeros = row == 0
        nonzero_mass = row[~zeros].sum()
        if nonzero_mass <= 0:
            raise ValidationError(f"row {i} is entirely zero")
        if not zeros.any():
            continue
        added = tau * zeros.sum()
        if added >= nonzero_mass:
            raise ValidationError(f"tau too large for row {i}")
        out[i, ~zeros] = row[~zeros] * (1.0 - added / nonzero_mass)
        out[i, zeros] = tau
        # keep the row sum at 1 to the last ulp
        out[i, int(np.argmax(out[i]))] += 1.0 - out[i].sum()
    return TransitionMatrix(out)


def sample_chain(prior: MarkovChainPrior, rng: np.random.Generator | int | None) -> np.ndarray:
    """One state sequence of length T."""
    return sample_chains(prior, 1, rng)[0]


def sample_chains(prior: MarkovChainPrior, count: int, rng: np.random.Generator | int | None) -> np.ndarray:
    """``count`` independent sequences, shape (count, T), via inverse-CDF steps."""
    rng = np.random.default_rng(rng)
    cdf = np.cumsum(prior.transition.rows, axis=1)
    cdf[:, -1] = 1.0
    init_cdf = np.cumsum(prior.initial)
    init_cdf[-1] = 1.0
    out = np.empty((count, prior.length), dtype=np.int64)
    out[:, 0] = np.searchsorted(init_cdf, rng.random(count), side="right")
    for t in range(1, prior.length):
        u = rng.random(count)
        out[:, t] = (u[:, None] >= cdf[out[:, t - 1]]).sum(axis=1)
    return out


def gaussian_conditional(
    prior: GaussianPrior,
    target: int,
    conditioning: Sequence[int],
    values: Sequence[float] | np.ndarray,
) -> tuple[float, float]:
    """Mean and variance of x_target given x_Q = values (untruncated Gaussian)."""
    Q = [int(j) for j in conditioning]
    if target in Q:
        raise ValidationError("target index must not be conditioned on")
    x = np.asarray(values, dtype=float)
    if x.shape != (len(Q),):
        raise ValidationError("values must match the conditioning indices")
    cov = prior.covariance
    if not Q:
        return 0.0, float(cov[target, target])
    weights = conditional_weights(prior, target, Q)
    var = float(cov[target, target] - weights @ cov[Q, target])
    return float(weights @ x), var


def conditional_weights(prior: GaussianPrior, target: int, conditioning: Sequence[int]) -> np.ndarray:
    """Row vector Sigma_{i,Q} Sigma_{Q,Q}^{-1}."""
    Q = list(conditioning)
    cov = prior.covariance
    sub = cov[np.ix_(Q, Q)]
    cond = np.linalg.cond(sub)
    if not np.isfinite(cond) or cond > 1e14:
        raise NumericError(f"Sigma_QQ is singular (condition number {cond:.3e})")
    return np.linalg.solve(sub, cov[Q, target])


def enumerate_markov_prior(prior: MarkovChainPrior) -> ExplicitPrior:
    """Every state sequence of the chain with its probability."""
    k, T = prior.states, prior.length
    if k**T > 2**20:
        raise ValidationError(f"support of size {k**T} is too large to enumerate")
    grid = np.array(list(itertools.product(range(k), repeat=T)), dtype=np.int64)
    probs = prior.initial[grid[:, 0]].copy()
    rows = prior.transition.rows
    for t in range(1, T):
        probs *= rows[grid[:, t - 1], grid[:, t]]
    return ExplicitPrior(tuple(map(tuple, grid.tolist())), probs)


def prior_from_json(doc: dict[str, Any]) -> MarkovChainPrior | GaussianPrior:
    kind = doc.get("kind")
    try:
        return _prior_from_json(kind, doc)
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"malformed {kind} prior: missing or bad field {exc}") from exc


def _prior_from_json(kind: Any, doc: dict[str, Any]) -> MarkovChainPrior | GaussianPrior:
    if kind == "markov":
        rows = np.asarray(doc["rows"], dtype=float)
        if rows.shape[0] != int(doc.get("states", rows.shape[0])):
            raise ValidationError("'states' does not match the rows")
        return MarkovChainPrior(TransitionMatrix(rows), int(doc["length"]))
    if kind == "gaussian":
        return GaussianPrior(int(doc["n"]), float(doc["lengthscale"]), float(doc["gamma"]))
    raise ValidationError(f"unknown prior kind {kind!r}")


def load_prior(path: str) -> MarkovChainPrior | GaussianPrior:
    with open(path) as fh:
        return prior_from_json(json.load(fh))


def read_sequences(path: str) -> list[list[int]]:
    """One comma-separated integer sequence per line."""
    out: list[list[int]] = []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            cells = [c.strip() for c in row if c.strip()]
            if not cells:
                continue
            try:
                out.append([int(c) for c in cells])
            except ValueError as exc:
                raise ValidationError(f"line {lineno}: non-integer state id") from exc
    if not out:
        raise ValidationError(f"{path} holds no sequences")
    return out


def write_sequences(path: str, sequences: Iterable[Sequence[int]]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        for seq in sequences:
            writer.writerow([int(s) for s in seq])
