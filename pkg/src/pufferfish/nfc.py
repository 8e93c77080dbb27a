"""Necessary-for-composition (NfC) audit of finite mechanisms.

For a left dataset D* and the datasets D_l of the opposite secret, NfC asks for
a convex vector beta with

    log Pr(M(D*) = w) <= eps + sum_l beta_l log Pr(M(D_l) = w)   for every w.

The smallest such eps is the value of a small LP (primal over output weights
alpha, dual over beta). One-hot beta is a DP-style constraint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Sequence

import numpy as np

from pufferfish.errors import ValidationError
from pufferfish.lp import INFEASIBLE, OPTIMAL, lp_solve
from pufferfish.priors import SecretPair

TOL = 1e-9


class TaggedDataset(NamedTuple):
    """Dataset identifier with the set of secret tags that hold for it."""

    id: Any
    secrets: frozenset


@dataclass(frozen=True)
class LikelihoodMatrix:
    """Rows are datasets, columns outputs, entries Pr(M(D_row) = w_col)."""

    datasets: tuple
    outputs: tuple
    probs: np.ndarray

    def __post_init__(self) -> None:
        probs = np.array(self.probs, dtype=float)
        datasets, outputs = tuple(self.datasets), tuple(self.outputs)
        if probs.shape != (len(datasets), len(outputs)):
            raise ValidationError(f"probs shape {probs.shape} does not match {len(datasets)}x{len(outputs)}")
        if np.any(probs < 0) or np.any(probs > 1 + 1e-12):
            raise ValidationError("probabilities must lie in [0, 1]")
        if np.max(np.abs(probs.sum(axis=1) - 1.0), initial=0.0) > 1e-10:
            raise ValidationError("rows must sum to 1")
        probs.setflags(write=False)
        object.__setattr__(self, "datasets", datasets)
        object.__setattr__(self, "outputs", outputs)
        object.__setattr__(self, "probs", probs)

    def rows_where(self, predicate) -> list[int]:
        return [i for i, d in enumerate(self.datasets) if predicate(d)]

    def to_json(self) -> dict[str, Any]:
        def ds(d: Any) -> dict[str, Any]:
            if isinstance(d, TaggedDataset):
                return {"id": d.id, "secrets": sorted(d.secrets)}
            return {"id": d, "secrets": []}

        return {
            "datasets": [ds(d) for d in self.datasets],
            "outputs": list(self.outputs),
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "LikelihoodMatrix":
        try:
            datasets = tuple(TaggedDataset(d["id"], frozenset(d.get("secrets", []))) for d in doc["datasets"])
            return cls(datasets, tuple(doc["outputs"]), np.asarray(doc["probs"], dtype=float))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"malformed likelihood document: {exc}") from exc

    @classmethod
    def load(cls, path: str) -> "LikelihoodMatrix":
        with open(path) as fh:
            return cls.from_json(json.load(fh))

    def secret_tags(self) -> list[str]:
        tags: set[str] = set()
        for d in self.datasets:
            if isinstance(d, TaggedDataset):
                tags |= set(d.secrets)
        return sorted(tags)


@dataclass(frozen=True)
class NfcCertificate:
    """Convex beta over right-secret rows witnessing eps0 for one left row."""

    pair: str
    left: int
    right: tuple[int, ...]
    beta: np.ndarray
    eps0: float

    def __post_init__(self) -> None:
        beta = np.asarray(self.beta, dtype=float)
        if beta.shape != (len(self.right),):
            raise ValidationError("beta must match the right rows")
        if np.any(beta < -TOL) or abs(beta.sum() - 1.0) > TOL:
            raise ValidationError("beta must be a convex combination")
        object.__setattr__(self, "beta", np.clip(beta, 0.0, None))

    @property
    def one_hot(self) -> bool:
        return int(np.count_nonzero(self.beta > TOL)) == 1

    def to_json(self) -> dict[str, Any]:
        return {"pair": self.pair, "left": self.left, "right": list(self.right),
                "beta": self.beta.tolist(), "eps0": self.eps0}


def _split_rows(L: LikelihoodMatrix, pair: SecretPair, left: int) -> list[int]:
    if not pair.left(L.datasets[left]):
        raise ValidationError(f"row {left} does not satisfy the left secret of {pair.label!r}")
    right = L.rows_where(pair.right)
    if not right:
        raise ValidationError(f"no dataset satisfies the right secret of {pair.label!r}")
    return right


def _usable(L: LikelihoodMatrix, left: int, right: list[int]) -> tuple[np.ndarray, list[int]]:
    """Outputs with mass at the left row, and right rows with no output of zero mass there.

    A right row that gives zero mass to an output the left row can produce makes
    its constraint infinite; any finite certificate must avoid it.
    """
    star = L.probs[left]
    support = np.flatnonzero(star > 0)
    usable = [j for j in right if np.all(L.probs[j, support] > 0)]
    return support, usable


def _log_ratios(L: LikelihoodMatrix, left: int, rows: list[int], support: np.ndarray) -> np.ndarray:
    """R[l, w] = log Pr(M(D*) = w) - log Pr(M(D_l) = w)."""
    return np.log(L.probs[left, support])[None, :] - np.log(L.probs[np.ix_(rows, support)])


def primal_nfc_epsilon(L: LikelihoodMatrix, pair: SecretPair, left: int) -> float:
    """max eps0 over convex alpha on outputs with sum_w alpha_w R[l, w] >= eps0 for every right row l."""
    right = _split_rows(L, pair, left)
    support, usable = _usable(L, left, right)
    if not usable:
        return math.inf
    R = _log_ratios(L, left, usable, support)
    k = support.size
    # variables: alpha (k), eps0 (free); maximise eps0
    c = np.zeros(k + 1)
    c[-1] = 1.0
    A_ub = np.hstack([-R, np.ones((len(usable), 1))])
    b_ub = np.zeros(len(usable))
    A_eq = np.zeros((1, k + 1))
    A_eq[0, :k] = 1.0
    res = lp_solve(c, A_ub, b_ub, A_eq, [1.0], maximize=True, free=[k])
    if res.status != OPTIMAL:
        raise RuntimeError(f"primal NfC program ended with status {res.status}")
    return res.value


def _certificate_value(R: np.ndarray, beta: np.ndarray) -> float:
    return float(np.max(beta @ R))


def dual_nfc_beta(L: LikelihoodMatrix, pair: SecretPair, left: int) -> NfcCertificate | None:
    """min x over convex beta with log L*(w) - sum_l beta_l log L_l(w) <= x for every w.

    Returns None when the primal value is infinite. When every beta is optimal the
    uniform vector is returned.
    """
    right = _split_rows(L, pair, left)
    support, usable = _usable(L, left, right)
    if not usable:
        return None
    R = _log_ratios(L, left, usable, support)  # (l, w)
    n = len(usable)
    # variables: beta (n), x (free); minimise x
    c = np.zeros(n + 1)
    c[-1] = 1.0
    A_ub = np.hstack([R.T, -np.ones((support.size, 1))])
    b_ub = np.zeros(support.size)
    A_eq = np.zeros((1, n + 1))
    A_eq[0, :n] = 1.0
    res = lp_solve(c, A_ub, b_ub, A_eq, [1.0], free=[n])
    if res.status != OPTIMAL:
        raise RuntimeError(f"dual NfC program ended with status {res.status}")
    beta_u = np.full(n, 1.0 / n)
    beta = res.x[:n]
    if _certificate_value(R, beta_u) <= res.value + 1e-12:
        beta = beta_u
    beta = np.clip(beta, 0.0, None)
    beta /= beta.sum()
    full = np.zeros(len(right))
    for pos, j in enumerate(usable):
        full[right.index(j)] = beta[pos]
    return NfcCertificate(pair.label, left, tuple(right), full, _certificate_value(R, beta))


def one_hot_certificate(L: LikelihoodMatrix, pair: SecretPair, left: int) -> NfcCertificate | None:
    """Best DP-style certificate: a single right row with the smallest worst-case log ratio."""
    right = _split_rows(L, pair, left)
    support, usable = _usable(L, left, right)
    if not usable:
        return None
    R = _log_ratios(L, left, usable, support)
    worst = R.max(axis=1)
    pos = int(np.argmin(worst))
    beta = np.zeros(len(right))
    beta[right.index(usable[pos])] = 1.0
    return NfcCertificate(pair.label, left, tuple(right), beta, float(worst[pos]))


@dataclass(frozen=True)
class NfcRow:
    pair: str
    left: int
    eps0: float
    passed: bool
    certificate: NfcCertificate | None
    evidence: list[Any] = field(default_factory=list)

    def to_json(self) -> dict[str, Any]:
        return {
            "pair": self.pair,
            "left": self.left,
            "eps0": self.eps0 if math.isfinite(self.eps0) else "inf",
            "passed": self.passed,
            "certificate": None if self.certificate is None else self.certificate.to_json(),
            "evidence": self.evidence,
        }


@dataclass(frozen=True)
class NfcReport:
    eps: float
    rows: tuple[NfcRow, ...]

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    @property
    def max_eps0(self) -> float:
        return max((r.eps0 for r in self.rows), default=0.0)

    def to_json(self) -> dict[str, Any]:
        return {"eps": self.eps, "passed": self.passed, "rows": [r.to_json() for r in self.rows]}


def _evidence(L: LikelihoodMatrix, left: int, right: list[int], cert: NfcCertificate | None) -> list[Any]:
    star = L.probs[left]
    if cert is None:
        killers = [w for w in np.flatnonzero(star > 0)
                   if any(L.probs[j, w] == 0 for j in right)]
        return [L.outputs[int(w)] for w in killers]
    support = np.flatnonzero(star > 0)
    rows = list(cert.right)
    R = _log_ratios(L, left, rows, support)
    w = support[int(np.argmax(cert.beta @ R))]
    return [L.outputs[int(w)]]


def check_nfc(L: LikelihoodMatrix, secrets: Sequence[SecretPair], eps: float) -> NfcReport:
    """Audit both orderings of every pair at every left row.

    A row passes when the primal eps0 is at most eps. Passing rows carry a
    one-hot certificate whenever one suffices, else the LP certificate.
    Failing rows list the outputs that witness the violation.
    """
    rows: list[NfcRow] = []
    for base in secrets:
        for pair in (base, base.reversed()):
            right = L.rows_where(pair.right)
            for left in L.rows_where(pair.left):
                if not right:
                    raise ValidationError(f"no dataset satisfies the right secret of {pair.label!r}")
                eps0 = primal_nfc_epsilon(L, pair, left)
                passed = eps0 <= eps + TOL
                cert = one_hot_certificate(L, pair, left)
                if cert is None or cert.eps0 > eps + TOL:
                    cert = dual_nfc_beta(L, pair, left)
                evidence = [] if passed else _evidence(L, left, right, cert)
                rows.append(NfcRow(pair.label, left, eps0, passed, cert, evidence))
    return NfcReport(eps, tuple(rows))


def postprocess(L: LikelihoodMatrix, channel: np.ndarray, outputs: Sequence[Any] | None = None) -> LikelihoodMatrix:
    """Likelihoods after a randomized map; channel[new, old] = Pr(new | old)."""
    channel = np.asarray(channel, dtype=float)
    if channel.ndim != 2 or channel.shape[1] != len(L.outputs):
        raise ValidationError(f"channel needs {len(L.outputs)} columns, got shape {channel.shape}")
    if np.any(channel < 0) or np.max(np.abs(channel.sum(axis=0) - 1.0)) > 1e-10:
        raise ValidationError("channel columns must be probability vectors")
    outs = tuple(range(channel.shape[0])) if outputs is None else tuple(outputs)
    probs = L.probs @ channel.T
    return LikelihoodMatrix(L.datasets, outs, probs)


def product_matrix(L: LikelihoodMatrix, runs: int = 2) -> LikelihoodMatrix:
    """Joint likelihoods of ``runs`` independent runs on the same dataset."""
    probs = L.probs
    outputs: list[tuple] = [(o,) for o in L.outputs]
    for _ in range(runs - 1):
        probs = (probs[:, :, None] * L.probs[:, None, :]).reshape(len(L.datasets), -1)
        outputs = [o + (p,) for o in outputs for p in L.outputs]
    return LikelihoodMatrix(L.datasets, tuple(outputs), probs)


def secret_likelihood_matrix(
    L: LikelihoodMatrix, prior_probs: Sequence[float], secret_tags: Sequence[str]
) -> LikelihoodMatrix:
    """Rows Pr(M = w | secret) = sum_D Pr(D | secret) Pr(M(D) = w), one per tag."""
    weights = np.asarray(prior_probs, dtype=float)
    rows, names = [], []
    for tag in secret_tags:
        mask = np.array([tag in d.secrets for d in L.datasets])
        total = weights[mask].sum()
        if total <= 0:
            raise ValidationError(f"secret {tag!r} has zero prior probability")
        rows.append((np.where(mask, weights, 0.0) / total) @ L.probs)
        names.append(TaggedDataset(tag, frozenset([tag])))
    return LikelihoodMatrix(tuple(names), L.outputs, np.array(rows))


def prune_redundant(constraints: np.ndarray) -> list[int]:
    """Indices of constraints w.v <= eps not implied by a convex mix of the others.

    Constraint k is redundant when w_k is a convex combination of the other
    rows, which is checked as an LP feasibility problem.
    """
    W = np.asarray(constraints, dtype=float)
    keep = list(range(W.shape[0]))
    for k in range(W.shape[0]):
        others = [j for j in keep if j != k]
        if not others:
            continue
        A_eq = np.vstack([W[others].T, np.ones((1, len(others)))])
        b_eq = np.concatenate([W[k], [1.0]])
        res = lp_solve(np.zeros(len(others)), A_eq=A_eq, b_eq=b_eq)
        if res.status != INFEASIBLE:
            keep.remove(k)
    return keep


def postprocessing_demo(eps: float = 1.0, t: float = 0.5, mass: float = 0.05):
    """Numerical instance of the two-symbol merge applied to a mechanism whose only
    tight certificate mixes two right datasets.

    Datasets: D1 (secret 's1') and D2, D3 (secret 's2'). Outputs 0 and 2 have
    log ratios (eps + t, eps - t) and (eps - t, eps + t) from D1 to (D2, D3), so
    beta = (1/2, 1/2) is tight at eps and every one-hot beta exceeds it. Outputs
    1 and 3 fill each half of the mass. The channel sends 0 and 2 to a new
    symbol with probabilities p*/Pr(D1 -> 0) and p*/Pr(D1 -> 2).

    Returns (original, channel, post-processed, secret pairs).
    """
    if not 0 < t <= eps:
        raise ValidationError("need 0 < t <= eps")
    u0 = np.array([mass, mass * math.exp(-eps - t), mass * math.exp(-eps + t)])
    u2 = np.array([mass, mass * math.exp(-eps + t), mass * math.exp(-eps - t)])
    probs = np.column_stack([u0, 0.5 - u0, u2, 0.5 - u2])
    datasets = (
        TaggedDataset("D1", frozenset(["s1"])),
        TaggedDataset("D2", frozenset(["s2"])),
        TaggedDataset("D3", frozenset(["s2"])),
    )
    L = LikelihoodMatrix(datasets, (0, 1, 2, 3), probs)
    p_star = min(u0[0], u2[0])
    channel = np.zeros((2, 4))
    channel[1, 0] = p_star / u0[0]
    channel[0, 0] = 1.0 - channel[1, 0]
    channel[0, 1] = 1.0
    channel[1, 2] = p_star / u2[0]
    channel[0, 2] = 1.0 - channel[1, 2]
    channel[0, 3] = 1.0
    post = postprocess(L, channel)
    return L, channel, post, [SecretPair.tagged("s1", "s2")]
