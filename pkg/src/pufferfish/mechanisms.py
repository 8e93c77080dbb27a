"""Per-entry DP mechanisms turned into Pufferfish mechanisms through a curve.

A curve point (b, a) with a < eps_P lets an eps_DP-DP mechanism with
b * eps_DP + a <= eps_P run as an eps_P-Pufferfish mechanism. When no point
qualifies the budget falls back to group DP over all entries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Sequence

import numpy as np

from pufferfish.errors import ValidationError
from pufferfish.influence import AbCurve, best_epsilon_dp, markov_ab_curve

_TWO53 = float(2**53)
_SLACK = 1e-12


@dataclass(frozen=True)
class Query:
    """Vector-valued query with per-entry l1 sensitivity ``lipschitz``."""

    evaluate: Callable[[Any], Sequence[float] | float]
    lipschitz: float
    output_dim: int = 1

    def __post_init__(self) -> None:
        if not self.lipschitz > 0:
            raise ValidationError("lipschitz constant must be positive")
        if int(self.output_dim) < 1:
            raise ValidationError("output_dim must be at least 1")

    def __call__(self, data: Any) -> np.ndarray:
        value = np.atleast_1d(np.asarray(self.evaluate(data), dtype=float))
        if value.shape != (self.output_dim,):
            raise ValidationError(f"query returned shape {value.shape}, expected ({self.output_dim},)")
        return value


@dataclass(frozen=True)
class UtilityFunction:
    """Score u(D, r) over a finite candidate set with sensitivity delta_u."""

    score: Callable[[Any, Any], float]
    sensitivity: float
    candidates: tuple = field(default_factory=tuple)

    def __post_init__(self) -> None:
        if not self.sensitivity > 0:
            raise ValidationError("utility sensitivity must be positive")
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if not self.candidates:
            raise ValidationError("candidate set is empty")

    def scores(self, data: Any, candidates: Sequence[Any] | None = None) -> np.ndarray:
        cands = self.candidates if candidates is None else candidates
        return np.array([float(self.score(data, r)) for r in cands])


@dataclass(frozen=True)
class MechanismReceipt:
    """Record of one mechanism run; checks the translation inequality on construction."""

    output: Any
    eps_dp: float
    point: tuple[int, float] | None
    eps_p: float
    kind: str
    seed: int | None = None
    entry_count: int = 1

    def __post_init__(self) -> None:
        if self.point is None:
            expected = self.eps_p / self.entry_count
            if not math.isclose(self.eps_dp, expected, rel_tol=1e-12):
                raise ValidationError(f"fallback receipt must use eps_p/|I| = {expected}, got {self.eps_dp}")
        else:
            b, a = self.point
            if b * self.eps_dp + a > self.eps_p * (1 + _SLACK) + _SLACK:
                raise ValidationError(f"b*eps_dp + a = {b * self.eps_dp + a} exceeds eps_p = {self.eps_p}")

    @property
    def fallback(self) -> bool:
        return self.point is None

    @property
    def a(self) -> float:
        return 0.0 if self.point is None else self.point[1]

    @property
    def b(self) -> int | None:
        return None if self.point is None else self.point[0]

    def to_json(self) -> dict[str, Any]:
        out = self.output
        if isinstance(out, np.ndarray):
            out = out.tolist()
        elif isinstance(out, tuple):
            out = [o.item() if isinstance(o, np.generic) else o for o in out]
        return {
            "output": out,
            "eps_dp": self.eps_dp,
            "eps_p": self.eps_p,
            "a": self.a,
            "b": self.b,
            "fallback": self.fallback,
            "kind": self.kind,
            "seed": self.seed,
            "entry_count": self.entry_count,
        }


def _open_uniform(rng: np.random.Generator, size: int | None = None) -> np.ndarray | float:
    """Uniform draw on the open interval (0, 1)."""
    k = rng.integers(0, 2**53, size=size)
    return (k + 0.5) / _TWO53


def sample_laplace(scale: float, rng: np.random.Generator, size: int | None = None) -> np.ndarray | float:
    """Laplace(0, scale) by inverse CDF, one uniform per sample."""
    if not scale > 0:
        raise ValidationError("scale must be positive")
    v = np.asarray(_open_uniform(rng, size)) - 0.5
    out = -scale * np.sign(v) * np.log1p(-2.0 * np.abs(v))
    return float(out) if size is None else out


def _entry_count(data: Any, entry_count: int | None) -> int:
    if entry_count is not None:
        return int(entry_count)
    return max(1, int(np.size(np.asarray(data))))


def pufferfish_laplace(
    data: Any,
    query: Query,
    curve: AbCurve,
    eps_p: float,
    rng: np.random.Generator,
    entry_count: int | None = None,
    seed: int | None = None,
) -> tuple[np.ndarray, MechanismReceipt]:
    """F(D) plus Laplace noise of scale L * d / eps_DP in each of the d coordinates."""
    count = _entry_count(data, entry_count)
    eps_dp, point = best_epsilon_dp(curve, eps_p, count)
    value = query(data)
    scale = query.lipschitz * query.output_dim / eps_dp
    noisy = value + sample_laplace(scale, rng, size=query.output_dim)
    receipt = MechanismReceipt(noisy, eps_dp, point, eps_p, "laplace", seed, count)
    return noisy, receipt


def exponential_probabilities(scores: np.ndarray, eps_dp: float, sensitivity: float) -> np.ndarray:
    """Selection probabilities proportional to exp(eps * u / (2 * delta_u))."""
    scores = np.asarray(scores, dtype=float)
    if scores.size == 0:
        raise ValidationError("candidate set is empty")
    if eps_dp < 0:
        raise ValidationError("eps_dp must be nonnegative")
    logits = eps_dp * scores / (2.0 * sensitivity)
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def _pick(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return min(idx, probs.size - 1)


def exponential_select(data: Any, u: UtilityFunction, eps_dp: float, rng: np.random.Generator) -> Any:
    """One draw of the exponential mechanism over u.candidates."""
    probs = exponential_probabilities(u.scores(data), eps_dp, u.sensitivity)
    return u.candidates[_pick(probs, rng)]


def topk_from_scores(
    scores: np.ndarray, k: int, eps_round: float, sensitivity: float, rng: np.random.Generator
) -> list[int]:
    """K sequential exponential draws without replacement; returns indices in selection order."""
    remaining = list(range(len(scores)))
    scores = np.asarray(scores, dtype=float)
    chosen: list[int] = []
    for _ in range(k):
        probs = exponential_probabilities(scores[remaining], eps_round, sensitivity)
        chosen.append(remaining.pop(_pick(probs, rng)))
    return chosen


def pufferfish_exponential_topk(
    data: Any,
    u: UtilityFunction,
    k: int,
    curve: AbCurve,
    eps_p: float,
    rng: np.random.Generator,
    entry_count: int | None = None,
    seed: int | None = None,
) -> tuple[tuple, MechanismReceipt]:
    """Top-K by K exponential draws at eps_DP / K each, without replacement."""
    if not 1 <= int(k) <= len(u.candidates):
        raise ValidationError(f"K={k} must lie in [1, {len(u.candidates)}]")
    count = _entry_count(data, entry_count)
    eps_dp, point = best_epsilon_dp(curve, eps_p, count)
    picks = topk_from_scores(u.scores(data), int(k), eps_dp / int(k), u.sensitivity, rng)
    out = tuple(u.candidates[i] for i in picks)
    return out, MechanismReceipt(out, eps_dp, point, eps_p, "exponential-topk", seed, count)


def group_dp_epsilon(eps_p: float, entry_count: int) -> float:
    """Group-privacy budget eps_P / |I|."""
    if int(entry_count) < 1:
        raise ValidationError("entry_count must be at least 1")
    return eps_p / int(entry_count)


def group_dp_curve(entry_count: int) -> AbCurve:
    """Single point (|I|, 0): shielding every entry leaves nothing to leak."""
    return AbCurve(((int(entry_count), 0.0),), "user-supplied")


def mqm_laplace_baseline(
    data: Any,
    queries: Sequence[Query],
    p: float | None,
    q: float | None,
    eps_p: float,
    b_max: int,
    rng: np.random.Generator,
    curve: AbCurve | None = None,
    entry_count: int | None = None,
    seed: int | None = None,
) -> tuple[np.ndarray, list[MechanismReceipt]]:
    """Answer m scalar queries with eps_P / m each through pufferfish_laplace.

    The curve defaults to the binary closed form for (p, q); pass ``curve`` for
    chains with more states.
    """
    if not queries:
        raise ValidationError("need at least one query")
    if curve is None:
        if p is None or q is None:
            raise ValidationError("either (p, q) or a curve is required")
        curve = markov_ab_curve(p, q, b_max)
    per_query = eps_p / len(queries)
    answers, receipts = [], []
    for query in queries:
        noisy, receipt = pufferfish_laplace(data, query, curve, per_query, rng, entry_count, seed)
        answers.append(float(noisy[0]))
        receipts.append(receipt)
    return np.array(answers), receipts
