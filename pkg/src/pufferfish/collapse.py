"""Mechanisms with zero (or bounded) single-run leakage that collapse under repetition.

Each example comes with its mechanism, the attack that reads the secret off
repeated outputs, exact likelihood matrices, and a Monte-Carlo estimate of how
many runs the attack needs.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field
from functools import reduce
from operator import xor
from typing import Any, Callable, Sequence

import numpy as np

from pufferfish.errors import IntegrityError, ValidationError
from pufferfish.nfc import LikelihoodMatrix, TaggedDataset
from pufferfish.priors import ExplicitPrior

UNKNOWN = "unknown"
SIGMA1 = "sigma1"
SIGMA2 = "sigma2"
MAX_RUNS = 1_000_000


@dataclass(frozen=True)
class CollapseScenario:
    """Parameters of one example.

    example1: ``prior`` and the predicate ``secret`` (sigma_1).
    example2: bit count ``n``.
    example3: ``prior`` (reference prior), ``secret``, the sets ``u_true`` and
    ``u_false``, and the bounds (L_T, U_T, L_F, U_F).
    """

    kind: str
    prior: ExplicitPrior | None = None
    secret: Callable[[Any], bool] | None = None
    n: int = 3
    u_true: frozenset = field(default_factory=frozenset)
    u_false: frozenset = field(default_factory=frozenset)
    bounds: tuple[float, float, float, float] | None = None

    def __post_init__(self) -> None:
        if self.kind == "example2":
            if int(self.n) < 3:
                raise ValidationError("example 2 needs n >= 3 bits")
            return
        if self.kind not in ("example1", "example3"):
            raise ValidationError(f"unknown scenario kind {self.kind!r}")
        if self.prior is None or self.secret is None:
            raise ValidationError(f"{self.kind} needs a prior and a secret")
        on = [d for d in self.prior.datasets if self.secret(d)]
        off = [d for d in self.prior.datasets if not self.secret(d)]
        if self.kind == "example1" and (len(on) < 2 or len(off) < 2):
            raise ValidationError("example 1 needs at least 2 datasets per secret")
        if self.kind == "example3":
            if not set(self.u_true) <= set(on) or not set(self.u_false) <= set(off):
                raise ValidationError("U_T must hold sigma_1 datasets and U_F the others")
            if self.bounds is None:
                raise ValidationError("example 3 needs (L_T, U_T, L_F, U_F)")
            lt, ut, lf, uf = self.bounds
            if not (0 < lt <= ut < 1 and 0 < lf <= uf < 1):
                raise ValidationError("bounds must satisfy 0 < L <= U < 1")
            pt = self.prior.conditional(self.secret)[self.prior.mask(lambda d: d in self.u_true)].sum()
            pf = self.prior.conditional(lambda d: not self.secret(d))[
                self.prior.mask(lambda d: d in self.u_false)].sum()
            if not (lt - 1e-12 <= pt <= ut + 1e-12 and lf - 1e-12 <= pf <= uf + 1e-12):
                raise ValidationError("reference prior violates the stated bounds")

    def truth(self, dataset: Any) -> str:
        return SIGMA1 if self.secret(dataset) else SIGMA2


def _first_bit(d: tuple) -> bool:
    return d[0] == 1


def example1_scenario(per_secret: int = 2) -> CollapseScenario:
    """Uniform prior over 2 * per_secret datasets; sigma_1 is 'first bit is 1'."""
    if per_secret < 2:
        raise ValidationError("need at least 2 datasets per secret")
    width = max(1, math.ceil(math.log2(per_secret)))
    tails = list(itertools.product((0, 1), repeat=width))[:per_secret]
    datasets = [(1,) + t for t in tails] + [(0,) + t for t in tails]
    return CollapseScenario("example1", ExplicitPrior.uniform(datasets), _first_bit)


def example2_scenario(n: int = 3) -> CollapseScenario:
    return CollapseScenario("example2", n=n)


def example3_scenario(
    bounds: tuple[float, float, float, float] = (0.3, 0.7, 0.3, 0.7),
) -> CollapseScenario:
    """Four datasets, two per secret; U_T and U_F hold one each; uniform reference prior."""
    datasets = [(1, 1), (1, 0), (0, 1), (0, 0)]
    return CollapseScenario(
        "example3",
        ExplicitPrior.uniform(datasets),
        _first_bit,
        u_true=frozenset([(1, 1)]),
        u_false=frozenset([(0, 1)]),
        bounds=bounds,
    )


# -- example 1 ----------------------------------------------------------------------


def _draw(prior: ExplicitPrior, weights: np.ndarray, rng: np.random.Generator) -> Any:
    cdf = np.cumsum(weights)
    idx = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
    return prior.datasets[min(idx, len(prior.datasets) - 1)]


def example1_run(scenario: CollapseScenario, dataset: Any, rng: np.random.Generator) -> tuple[Any, Any]:
    """(D_a, D_b) with sigma_1 true of D_a; the real dataset sits in its own slot."""
    prior, secret = scenario.prior, scenario.secret
    if dataset not in prior.datasets:
        raise ValidationError("dataset is not in the prior support")
    if secret(dataset):
        other = prior.conditional(lambda d: not secret(d))
        return dataset, _draw(prior, other, rng)
    other = prior.conditional(secret)
    return _draw(prior, other, rng), dataset


def _fixed_slot_attack(outputs: Sequence[tuple[Any, Any]]) -> int | None:
    """0 if only the first slot never changed, 1 if only the second, else None."""
    if len(outputs) < 2:
        return None
    first_same = len({o[0] for o in outputs}) == 1
    second_same = len({o[1] for o in outputs}) == 1
    if first_same and not second_same:
        return 0
    if second_same and not first_same:
        return 1
    return None


def example1_attack(outputs: Sequence[tuple[Any, Any]]) -> str:
    """The slot that never changes holds the real dataset."""
    slot = _fixed_slot_attack(outputs)
    if slot is None:
        return UNKNOWN
    return SIGMA1 if slot == 0 else SIGMA2


def example1_likelihood(scenario: CollapseScenario) -> LikelihoodMatrix:
    """Exact per-dataset likelihoods of one run; outputs are the possible pairs."""
    prior, secret = scenario.prior, scenario.secret
    on = prior.conditional(secret)
    off = prior.conditional(lambda d: not secret(d))
    lefts = [d for d, w in zip(prior.datasets, on) if w > 0]
    rights = [d for d, w in zip(prior.datasets, off) if w > 0]
    outputs = [(a, b) for a in lefts for b in rights]
    index = {d: i for i, d in enumerate(prior.datasets)}
    probs = np.zeros((len(prior.datasets), len(outputs)))
    for i, d in enumerate(prior.datasets):
        for j, (a, b) in enumerate(outputs):
            if secret(d):
                probs[i, j] = off[index[b]] if a == d else 0.0
            else:
                probs[i, j] = on[index[a]] if b == d else 0.0
    rows = tuple(TaggedDataset(d, frozenset([SIGMA1 if secret(d) else SIGMA2])) for d in prior.datasets)
    return LikelihoodMatrix(rows, tuple(outputs), probs)


def example1_expected_runs(scenario: CollapseScenario) -> float:
    """Exact mean runs to reveal, averaged over the prior on the true dataset."""
    prior, secret = scenario.prior, scenario.secret
    on = prior.conditional(secret)
    off = prior.conditional(lambda d: not secret(d))

    def mean_for(weights: np.ndarray) -> float:
        w = weights[weights > 0]
        if np.any(w >= 1):
            return math.inf
        return 1.0 + float(np.sum(w / (1.0 - w)))

    p1 = prior.probability(secret)
    return p1 * mean_for(off) + (1 - p1) * mean_for(on)


def example1_runs_bound(scenario: CollapseScenario) -> float:
    """1 + 1 / (1 - max_D max_sigma Pr(D | sigma))."""
    prior, secret = scenario.prior, scenario.secret
    worst = max(prior.conditional(secret).max(), prior.conditional(lambda d: not secret(d)).max())
    return math.inf if worst >= 1 else 1.0 + 1.0 / (1.0 - worst)


# -- example 2 ----------------------------------------------------------------------


def _parity(bits: Sequence[int]) -> int:
    return reduce(xor, (int(b) for b in bits), 0)


def example2_output(n: int, bits: Sequence[int], type_a: bool) -> tuple[int, ...] | int:
    if n < 3:
        raise ValidationError("example 2 needs n >= 3 bits")
    if len(bits) != n:
        raise ValidationError(f"expected {n} bits, got {len(bits)}")
    x1 = int(bits[0])
    if type_a:
        return tuple(int(b) ^ x1 for b in bits[1:])
    return _parity(bits) if n % 2 == 1 else _parity(bits[1:])


def example2_run(n: int, bits: Sequence[int], rng: np.random.Generator) -> tuple[int, ...] | int:
    """Type A tuple (x_i xor x_1) or type B parity bit, by a fair coin."""
    return example2_output(n, bits, rng.random() < 0.5)


def example2_attack(outputs: Sequence[tuple[int, ...] | int], n: int | None = None) -> tuple[int, ...] | str:
    """Combine one type A and one type B output to recover every bit."""
    a_outs = {o for o in outputs if isinstance(o, tuple)}
    b_outs = {o for o in outputs if not isinstance(o, tuple)}
    if len(a_outs) > 1 or len(b_outs) > 1:
        raise IntegrityError("repeated runs disagree; outputs are inconsistent")
    if not a_outs or not b_outs:
        return UNKNOWN
    (ys,), (parity,) = a_outs, b_outs
    if n is not None and len(ys) != n - 1:
        raise IntegrityError("type A output has the wrong length")
    x1 = _parity(ys) ^ int(parity)
    return (x1,) + tuple(y ^ x1 for y in ys)


def example2_likelihood(n: int) -> LikelihoodMatrix:
    """Exact likelihoods over all 2^n datasets; tags 'x{i}={v}'."""
    datasets = list(itertools.product((0, 1), repeat=n))
    outputs: list[Any] = list(itertools.product((0, 1), repeat=n - 1)) + [0, 1]
    col = {o: j for j, o in enumerate(outputs)}
    probs = np.zeros((len(datasets), len(outputs)))
    for i, d in enumerate(datasets):
        probs[i, col[example2_output(n, d, True)]] += 0.5
        probs[i, col[example2_output(n, d, False)]] += 0.5
    rows = tuple(TaggedDataset(d, frozenset(f"x{j}={v}" for j, v in enumerate(d))) for d in datasets)
    return LikelihoodMatrix(rows, tuple(outputs), probs)


# -- example 3 ----------------------------------------------------------------------


def example3_case(scenario: CollapseScenario, dataset: Any) -> str:
    if scenario.secret(dataset):
        return "1a" if dataset in scenario.u_true else "1b"
    return "2a" if dataset in scenario.u_false else "2b"


_EX3_OUTPUTS = {
    "1a": (("1a", "2a"), ("1a", "2b")),
    "1b": (("1b", "2a"), ("1b", "2b")),
    "2a": (("1a", "2a"), ("1b", "2a")),
    "2b": (("1a", "2b"), ("1b", "2b")),
}


def example3_run(scenario: CollapseScenario, dataset: Any, rng: np.random.Generator) -> tuple[str, str]:
    """One of the two label pairs of the dataset's case, each with probability 1/2."""
    if scenario.prior is not None and dataset not in scenario.prior.datasets:
        raise ValidationError("dataset cannot be classified into a case")
    first, second = _EX3_OUTPUTS[example3_case(scenario, dataset)]
    return first if rng.random() < 0.5 else second


def example3_attack(outputs: Sequence[tuple[str, str]]) -> tuple[str, str] | str:
    """(case, secret) from the label that never changes, else UNKNOWN."""
    slot = _fixed_slot_attack(outputs)
    if slot is None:
        return UNKNOWN
    case = outputs[0][slot]
    return case, SIGMA1 if case.startswith("1") else SIGMA2


def example3_likelihood(scenario: CollapseScenario) -> LikelihoodMatrix:
    outputs = (("1a", "2a"), ("1b", "2a"), ("1a", "2b"), ("1b", "2b"))
    probs = np.zeros((len(scenario.prior.datasets), 4))
    for i, d in enumerate(scenario.prior.datasets):
        for o in _EX3_OUTPUTS[example3_case(scenario, d)]:
            probs[i, outputs.index(o)] = 0.5
    rows = tuple(TaggedDataset(d, frozenset([scenario.truth(d)])) for d in scenario.prior.datasets)
    return LikelihoodMatrix(rows, outputs, probs)


def example3_epsilon(bounds: tuple[float, float, float, float]) -> float:
    """Largest of the eight |log| ratios built from (L_T, U_T, L_F, U_F)."""
    lt, ut, lf, uf = bounds
    ratios = [ut / lf, lt / uf, (1 - ut) / uf, (1 - lt) / lf,
              lt / (1 - lf), ut / (1 - uf), (1 - ut) / (1 - lf), (1 - lt) / (1 - uf)]
    return max(abs(math.log(r)) for r in ratios)


def example3_output_intervals(bounds: tuple[float, float, float, float]) -> dict[tuple[str, str], tuple[float, float]]:
    """Range of Pr(w | sigma_1) / Pr(w | not sigma_1) for each output over priors meeting the bounds."""
    lt, ut, lf, uf = bounds
    return {
        ("1a", "2a"): (lt / uf, ut / lf),
        ("1b", "2a"): ((1 - ut) / uf, (1 - lt) / lf),
        ("1a", "2b"): (lt / (1 - lf), ut / (1 - uf)),
        ("1b", "2b"): ((1 - ut) / (1 - lf), (1 - lt) / (1 - uf)),
    }


def example3_prior(scenario: CollapseScenario, pt: float, pf: float, p1: float = 0.5) -> ExplicitPrior:
    """Prior with Pr(U_T | sigma_1) = pt and Pr(U_F | not sigma_1) = pf, spread evenly inside each set."""
    ds = scenario.prior.datasets
    groups = {
        "1a": [d for d in ds if example3_case(scenario, d) == "1a"],
        "1b": [d for d in ds if example3_case(scenario, d) == "1b"],
        "2a": [d for d in ds if example3_case(scenario, d) == "2a"],
        "2b": [d for d in ds if example3_case(scenario, d) == "2b"],
    }
    mass = {"1a": p1 * pt, "1b": p1 * (1 - pt), "2a": (1 - p1) * pf, "2b": (1 - p1) * (1 - pf)}
    probs = []
    for d in ds:
        g = example3_case(scenario, d)
        probs.append(mass[g] / len(groups[g]))
    return ExplicitPrior(ds, np.array(probs))


# -- expected runs ------------------------------------------------------------------


@dataclass(frozen=True)
class RunsEstimate:
    mean: float
    stderr: float
    trials: int
    censored: int
    unsound: int

    def to_json(self) -> dict[str, Any]:
        return {"mean": self.mean, "stderr": self.stderr, "trials": self.trials,
                "censored": self.censored, "unsound": self.unsound}


def _one_trial(scenario: CollapseScenario, rng: np.random.Generator, cap: int) -> tuple[int, bool, bool]:
    """Runs until a verdict; returns (runs, censored, sound)."""
    outputs: list[Any] = []
    if scenario.kind == "example2":
        bits = tuple(int(b) for b in (rng.random(scenario.n) < 0.5))
        for k in range(1, cap + 1):
            outputs.append(example2_run(scenario.n, bits, rng))
            verdict = example2_attack(outputs, scenario.n)
            if verdict != UNKNOWN:
                return k, False, verdict == bits
        return cap, True, True
    dataset = _draw(scenario.prior, np.asarray(scenario.prior.probs), rng)
    run = example1_run if scenario.kind == "example1" else example3_run
    for k in range(1, cap + 1):
        outputs.append(run(scenario, dataset, rng))
        if scenario.kind == "example1":
            verdict = example1_attack(outputs)
            if verdict != UNKNOWN:
                return k, False, verdict == scenario.truth(dataset)
        else:
            verdict = example3_attack(outputs)
            if verdict != UNKNOWN:
                ok = verdict == (example3_case(scenario, dataset), scenario.truth(dataset))
                return k, False, ok
    return cap, True, True


def estimate_expected_runs(
    scenario: CollapseScenario, trials: int, rng: np.random.Generator, cap: int = MAX_RUNS
) -> RunsEstimate:
    """Mean and standard error of the runs the attack needs, over ``trials`` planted datasets."""
    if int(trials) < 1:
        raise ValidationError("trials must be at least 1")
    runs = np.empty(int(trials))
    censored = unsound = 0
    for i in range(int(trials)):
        k, cens, sound = _one_trial(scenario, rng, cap)
        runs[i] = k
        censored += cens
        unsound += not sound
    if censored:
        warnings.warn(f"{censored} trials hit the cap of {cap} runs", RuntimeWarning)
    stderr = float(runs.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan
    return RunsEstimate(float(runs.mean()), stderr, int(trials), censored, unsound)
