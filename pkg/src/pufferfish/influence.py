"""(a, b)-influence curves.

a(b) bounds the log-odds an adversary gains about a secret entry from every
entry outside a best high-influence set of size at most b. Curves come from a
closed form for binary Markov chains, a one-dimensional sweep for Gaussian
process priors, or exact enumeration over explicit priors.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.special import log_ndtr

from pufferfish.errors import ValidationError
from pufferfish.priors import (
    ExplicitPrior,
    GaussianPrior,
    MarkovChainPrior,
    SecretPair,
    conditional_weights,
    gaussian_conditional,
    k_step_transition,
    stationary_distribution,
)

PROVENANCES = ("closed-form", "sweep", "oracle", "user-supplied")
MAX_ORACLE_SUPPORT = 2**20
MAX_EXHAUSTIVE_ENTRIES = 16


@dataclass(frozen=True)
class AbCurve:
    """Finite (b, a) points, b strictly increasing and a non-increasing."""

    points: tuple[tuple[int, float], ...]
    provenance: str = "user-supplied"

    def __post_init__(self) -> None:
        pts = tuple((int(b), float(a)) for b, a in self.points)
        if not pts:
            raise ValidationError("a curve needs at least one point")
        if self.provenance not in PROVENANCES:
            raise ValidationError(f"unknown provenance {self.provenance!r}")
        for (b0, a0), (b1, a1) in zip(pts, pts[1:]):
            if b1 <= b0:
                raise ValidationError("b values must be strictly increasing")
            if a1 > a0:
                raise ValidationError(f"a must be non-increasing in b (a({b0})={a0} < a({b1})={a1})")
        for b, a in pts:
            if b < 0 or not a >= 0:
                raise ValidationError(f"invalid point ({b}, {a})")
        object.__setattr__(self, "points", pts)

    @property
    def bs(self) -> list[int]:
        return [b for b, _ in self.points]

    @property
    def values(self) -> list[float]:
        return [a for _, a in self.points]

    def to_json(self) -> dict[str, Any]:
        return {
            "points": [{"b": b, "a": (a if math.isfinite(a) else "inf")} for b, a in self.points],
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "AbCurve":
        pts = [(int(p["b"]), float(p["a"])) for p in doc["points"]]
        return cls(tuple(pts), doc.get("provenance", "user-supplied"))

    @classmethod
    def load(cls, path: str) -> "AbCurve":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass(frozen=True)
class Partition:
    """Split of the entry indices into a high-influence set and its complement."""

    high: frozenset[int]
    low: frozenset[int]

    def __post_init__(self) -> None:
        if self.high & self.low:
            raise ValidationError("high and low sets overlap")

    @classmethod
    def from_high(cls, high: Iterable[int], n: int) -> "Partition":
        high = frozenset(int(i) for i in high)
        return cls(high, frozenset(range(n)) - high)


def _running_min(values: Sequence[float]) -> list[float]:
    out, cur = [], math.inf
    for v in values:
        cur = min(cur, v)
        out.append(cur)
    return out


# -- binary Markov chains -----------------------------------------------------


def _check_pq(p: float, q: float) -> None:
    if not (0.0 < p < 1.0 and 0.0 < q < 1.0):
        raise ValidationError(f"p and q must lie in (0, 1), got p={p}, q={q}")


def markov_ab_point(p: float, q: float, b: int, length: int | None = None) -> float:
    """Closed-form a(b) for the chain [[p, 1-p], [1-q, q]] under its stationary law."""
    _check_pq(p, q)
    b = int(b)
    if b < 1:
        raise ValidationError("b must be at least 1")
    if length is not None and b > int(length) - 2:
        raise ValidationError(f"b={b} is too large for a chain of length {length}")
    lam = p + q - 1.0
    pi = (1.0 - q) / (2.0 - p - q) if q > p else (1.0 - p) / (2.0 - p - q)
    d_left, d_right = (b + 1) // 2, (b + 2) // 2

    def term(d: int) -> float:
        ld = lam**d
        return abs(math.log((pi + ld * (1.0 - pi)) / (pi - ld * pi)))

    return term(d_left) + term(d_right)


def markov_ab_curve(p: float, q: float, b_max: int) -> AbCurve:
    """Closed-form points for b = 1..b_max (running minimum keeps the curve monotone)."""
    if int(b_max) < 1:
        raise ValidationError("b_max must be at least 1")
    raw = [markov_ab_point(p, q, b) for b in range(1, int(b_max) + 1)]
    return AbCurve(tuple(zip(range(1, int(b_max) + 1), _running_min(raw))), "closed-form")


# -- exact oracle over explicit priors ------------------------------------------


def _marginal_on(grid: np.ndarray, low: Sequence[int], weights: np.ndarray, radix: int) -> np.ndarray:
    if not low:
        return np.array([weights.sum()])
    codes = np.zeros(grid.shape[0], dtype=np.int64)
    for j in low:
        codes = codes * radix + grid[:, j]
    return np.bincount(codes, weights=weights, minlength=radix ** len(low))


def _max_log_ratio(num: np.ndarray, den: np.ndarray) -> float:
    live = num > 0
    if np.any(live & (den <= 0)):
        return math.inf
    if not np.any(live):
        return 0.0
    return float(np.max(np.log(num[live]) - np.log(den[live])))


def _window_highs(n: int, b: int, targets: Sequence[int]) -> Iterable[tuple[int, ...]]:
    lo, hi = min(targets), max(targets)
    for size in range(hi - lo + 1, min(b, n) + 1):
        for start in range(max(0, hi - size + 1), min(lo, n - size) + 1):
            yield tuple(range(start, start + size))


def _subset_highs(n: int, b: int) -> Iterable[tuple[int, ...]]:
    for size in range(0, min(b, n) + 1):
        yield from itertools.combinations(range(n), size)


def brute_force_ab_oracle(
    prior: ExplicitPrior,
    secrets: SecretPair,
    b: int,
    target_indices: Sequence[int],
    exhaustive: bool = False,
    max_support: int = MAX_ORACLE_SUPPORT,
) -> float:
    """Exact a*(b) for one secret pair by enumeration.

    For each ordering of the pair, minimise over partitions with |high| <= b the
    largest log ratio Pr(D_L = d | s_i) / Pr(D_L = d | s_j); return the larger of
    the two orderings. High sets are contiguous windows covering the targets
    unless ``exhaustive`` is set.
    """
    if len(prior.datasets) > max_support:
        raise ValidationError(f"support of size {len(prior.datasets)} exceeds the cap {max_support}")
    grid = np.asarray(prior.datasets, dtype=np.int64)
    if grid.ndim != 2:
        raise ValidationError("datasets must be equal-length integer tuples")
    n = grid.shape[1]
    radix = int(grid.max()) + 1 if grid.size else 1
    left = prior.mask(secrets.left)
    right = prior.mask(secrets.right)
    if np.any(left & right):
        raise ValidationError("secret predicates are not mutually exclusive")
    p_left, p_right = prior.probs[left].sum(), prior.probs[right].sum()
    if p_left <= 0 or p_right <= 0:
        raise ValidationError("both secrets need positive prior probability")
    w_left = np.where(left, prior.probs, 0.0) / p_left
    w_right = np.where(right, prior.probs, 0.0) / p_right
    if exhaustive:
        if n > MAX_EXHAUSTIVE_ENTRIES:
            raise ValidationError(f"exhaustive search is limited to {MAX_EXHAUSTIVE_ENTRIES} entries")
        highs = list(_subset_highs(n, int(b)))
    else:
        highs = list(_window_highs(n, int(b), list(target_indices)))
    best = [math.inf, math.inf]
    for high in highs:
        low = [j for j in range(n) if j not in set(high)]
        m_left = _marginal_on(grid, low, w_left, radix)
        m_right = _marginal_on(grid, low, w_right, radix)
        best[0] = min(best[0], _max_log_ratio(m_left, m_right))
        best[1] = min(best[1], _max_log_ratio(m_right, m_left))
    return max(best)


# -- general Markov chains via the window oracle ---------------------------------


def _side_terms(P: np.ndarray, initial: np.ndarray, T: int, d_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-distance pairwise log-ratio maxima for the nearest low entry on each side.

    right[d][s, s'] = max_x log P^d[s, x] / P^d[s', x]; left uses the time reversal
    under the stationary law. Index 0 stands for 'no entry on that side'.
    """
    k = P.shape[0]
    pi = stationary_distribution(P) if initial is None else initial
    right = np.zeros((d_max + 1, k, k))
    left = np.zeros((d_max + 1, k, k))
    Pd = np.eye(k)
    for d in range(1, d_max + 1):
        Pd = Pd @ P
        back = (Pd * pi[:, None]).T / pi[:, None]  # back[s, x] = Pr(X_{t-d}=x | X_t=s)
        for out, K in ((right, Pd), (left, back)):
            with np.errstate(divide="ignore", invalid="ignore"):
                lr = np.log(K[:, None, :]) - np.log(K[None, :, :])
            lr = np.where(K[:, None, :] > 0, lr, -np.inf)
            out[d] = np.max(lr, axis=2)
    return left, right


def markov_window_curve(prior: MarkovChainPrior, b_max: int | None = None) -> AbCurve:
    """Exact window-oracle curve for any finite chain started in its stationary law.

    By the Markov property only the nearest low-influence entry on each side of
    the secret matters, so the window oracle reduces to k-step transition ratios.
    For each ordered state pair the best window is chosen separately; the curve
    is the worst case over secret positions and pairs.
    """
    P = np.asarray(prior.transition.rows)
    pi = np.asarray(prior.initial)
    stat = stationary_distribution(prior.transition)
    if np.max(np.abs(pi - stat)) > 1e-10:
        raise ValidationError("the window curve assumes a stationary initial law")
    if np.any(pi <= 0):
        raise ValidationError("stationary law must be positive")
    T = prior.length
    b_max = T if b_max is None else min(int(b_max), T)
    left, right = _side_terms(P, pi, T, T)
    k = P.shape[0]
    pairs = [(s, t) for s in range(k) for t in range(k) if s != t]
    si, ti = np.array([s for s, _ in pairs]), np.array([t for _, t in pairs])
    # G[dl, dr, pair]: leakage for one ordered state pair with nearest low entries
    # dl (left) and dr (right) away
    G = np.maximum(left[:, None, si, ti] + right[None, :, si, ti], 0.0)
    values = []
    for b in range(1, b_max + 1):
        dls = np.arange(1, b + 1)
        drs = b + 1 - dls
        worst = 0.0
        # only the clipped distances to either end matter, so positions collapse
        shapes = {(min(c, b + 1), min(T - 1 - c, b + 1)) for c in range(T)}
        for room_l, room_r in shapes:
            # window [c - dl + 1, c + dr - 1] of size dl + dr - 1 = b
            lidx = np.where(dls > room_l, 0, dls)
            ridx = np.where(drs > room_r, 0, drs)
            worst = max(worst, float(np.max(np.min(G[lidx, ridx], axis=0))))
        values.append(worst)
    return AbCurve(tuple(zip(range(1, b_max + 1), _running_min(values))), "oracle")


# -- Gaussian process priors -------------------------------------------------------


def low_set_for(n: int, b: int, center: int) -> list[int]:
    """The n - b indices farthest from center; ties go to the lower index."""
    order = sorted(range(n), key=lambda j: (-abs(j - center), j))
    return sorted(order[: n - b])


def _log_interval_prob(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """log(Phi(hi) - Phi(lo)) for lo < hi, stable in both tails."""
    flip = lo > 0
    a = np.where(flip, -hi, lo)
    c = np.where(flip, -lo, hi)
    la, lc = log_ndtr(a), log_ndtr(c)
    return lc + np.log1p(-np.exp(la - lc))


def gaussian_ab_curve(
    prior: GaussianPrior,
    delta: float,
    r_grid_step: float | None = None,
    mu_grid_points: int = 2001,
    b_max: int | None = None,
) -> AbCurve:
    """Curve from the one-dimensional sweep over the conditional mean.

    Secrets are 'x_i in [r, r + delta]' versus 'x_i in [r', r' + delta]' for
    disjoint grid regions. For each b the low set is fixed (farthest entries from
    the middle), so only the conditional mean varies with the low values.
    """
    gamma = prior.gamma
    if not 0 < delta <= gamma / 10:
        raise ValidationError(f"delta must lie in (0, gamma/10], got {delta}")
    step = delta / 2 if r_grid_step is None else float(r_grid_step)
    if step <= 0 or int(mu_grid_points) < 1:
        raise ValidationError("grid parameters must be positive")
    r = np.arange(-gamma, gamma - delta + 1e-12, step)
    if r.size < 2 or r[-1] - r[0] < delta:
        raise ValidationError("region grid is degenerate")
    n = prior.n
    center = (n + 1) // 2 - 1
    b_max = n - 1 if b_max is None else min(int(b_max), n - 1)
    if b_max < 1:
        raise ValidationError("need n >= 2 for a Gaussian curve")
    # smallest grid offset that keeps two regions disjoint
    min_gap = int(math.ceil(delta / step - 1e-9))
    prior_logp = _log_interval_prob(r, r + delta)
    values = []
    for b in range(1, b_max + 1):
        low = low_set_for(n, b, center)
        w = conditional_weights(prior, center, low)
        _, var = gaussian_conditional(prior, center, low, np.zeros(len(low)))
        sigma = math.sqrt(max(var, 0.0))
        mu_bound = gamma * float(np.sum(np.abs(w)))
        mus = np.linspace(-mu_bound, mu_bound, int(mu_grid_points))
        lo = (r[None, :] - mus[:, None]) / sigma
        hi = (r[None, :] + delta - mus[:, None]) / sigma
        h = _log_interval_prob(lo, hi) - prior_logp[None, :]
        values.append(_best_disjoint_gap(h, min_gap))
    return AbCurve(tuple(zip(range(1, b_max + 1), _running_min(values))), "sweep")


def _best_disjoint_gap(h: np.ndarray, min_gap: int) -> float:
    """max over rows and index pairs |j - j'| >= min_gap of h[j] - h[j']."""
    R = h.shape[1]
    if min_gap >= R:
        raise ValidationError("region grid too short for two disjoint regions")
    prefix = np.minimum.accumulate(h, axis=1)
    suffix = np.minimum.accumulate(h[:, ::-1], axis=1)[:, ::-1]
    best = -np.inf
    j = np.arange(R)
    left_ok = j - min_gap >= 0
    right_ok = j + min_gap <= R - 1
    if left_ok.any():
        cand = h[:, left_ok] - prefix[:, j[left_ok] - min_gap]
        best = max(best, float(cand.max()))
    if right_ok.any():
        cand = h[:, right_ok] - suffix[:, j[right_ok] + min_gap]
        best = max(best, float(cand.max()))
    return max(best, 0.0)


# -- budgets -----------------------------------------------------------------------


def best_epsilon_dp(curve: AbCurve, eps_p: float, entry_count: int) -> tuple[float, tuple[int, float] | None]:
    """Largest per-entry DP budget the curve certifies for eps_p.

    Returns (eps_dp, point) for the best usable point, or (eps_p / entry_count,
    None) when no point has a < eps_p. Points with b = 0 are skipped.
    """
    if not eps_p > 0:
        raise ValidationError("eps_p must be positive")
    if int(entry_count) < 1:
        raise ValidationError("entry_count must be at least 1")
    best: tuple[float, tuple[int, float] | None] = (-math.inf, None)
    for b, a in curve.points:
        if b >= 1 and a < eps_p:
            eps = (eps_p - a) / b
            if eps > best[0]:
                best = (eps, (b, a))
    if best[1] is None:
        return eps_p / int(entry_count), None
    return best


def mqm_epsilon(eps_p: float, leakage: float, card_n: int) -> float:
    """Quilt-mechanism budget (eps_p - e) / card_N."""
    if int(card_n) < 1:
        raise ValidationError("card_N must be at least 1")
    if not leakage < eps_p:
        raise ValidationError(f"leakage {leakage} must be below eps_p {eps_p}")
    return (eps_p - leakage) / int(card_n)
