"""Top-K benchmark on synthetic Markov sequences.

Each trial samples a fresh dataset, asks every mechanism for the K most
frequent states, and scores the answer against the true counts.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import time
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np

from pufferfish.composition import Ledger, compose_pufferfish
from pufferfish.errors import ValidationError
from pufferfish.influence import AbCurve, best_epsilon_dp, markov_window_curve
from pufferfish.mechanisms import (
    group_dp_curve,
    group_dp_epsilon,
    MechanismReceipt,
    sample_laplace,
    topk_from_scores,
)
from pufferfish.metrics import acc_at_k, hit_rate_at_k, l1_count_error, ndcg_at_k, true_ranking
from pufferfish.priors import MarkovChainPrior, TransitionMatrix, sample_chains

MECHANISMS = ("ours_exp", "mqm", "group_dp_exp", "group_dp_lap")
REPORT_HEADER = ("eps_p", "mechanism", "metric", "mean", "stderr")

REPORT_SCHEMA: dict[str, Any] = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "required": ["config", "runtime_seconds", "rows"],
    "properties": {
        "config": {"type": "object"},
        "runtime_seconds": {"type": "number", "minimum": 0},
        "rows": {
            "type": "array",
            "items": {
                "type": "object",
                "required": list(REPORT_HEADER),
                "properties": {
                    "eps_p": {"type": "number", "exclusiveMinimum": 0},
                    "mechanism": {"type": "string"},
                    "metric": {"type": "string"},
                    "mean": {"type": "number"},
                    "stderr": {"type": ["number", "null"]},
                },
                "additionalProperties": False,
            },
        },
    },
    "additionalProperties": False,
}


def sticky_matrix(m: int, stay: float = 0.8) -> np.ndarray:
    """stay * I + (1 - stay) * uniform."""
    return stay * np.eye(m) + (1.0 - stay) / m


@dataclass
class ExperimentConfig:
    num_states: int = 10
    p: float | None = None
    q: float | None = None
    transition: list[list[float]] | None = None
    length: int = 200
    num_sequences: int = 500
    K: int = 3
    eps_p: list[float] = field(default_factory=lambda: [0.5, 1.0, 2.0, 3.0, 4.0, 5.0])
    trials: int = 20
    seed: int = 0
    mechanisms: list[str] = field(default_factory=lambda: list(MECHANISMS))
    groups: int = 1
    output: str | None = None

    def __post_init__(self) -> None:
        if not 1 <= self.K <= self.num_states:
            raise ValidationError(f"K={self.K} must lie in [1, {self.num_states}]")
        if self.trials < 1 or self.groups < 1:
            raise ValidationError("trials and groups must be at least 1")
        if not self.eps_p or any(not e > 0 for e in self.eps_p):
            raise ValidationError("eps_p values must be positive")
        unknown = set(self.mechanisms) - set(MECHANISMS)
        if unknown:
            raise ValidationError(f"unknown mechanisms {sorted(unknown)}")
        if self.length < 2 or self.num_sequences < 1:
            raise ValidationError("need length >= 2 and at least one sequence")
        if (self.p is None) != (self.q is None):
            raise ValidationError("give both p and q or neither")
        if self.p is not None and self.num_states != 2:
            raise ValidationError("(p, q) describes a two-state chain")

    def transition_matrix(self) -> TransitionMatrix:
        if self.transition is not None:
            rows = np.asarray(self.transition, dtype=float)
            if rows.shape != (self.num_states, self.num_states):
                raise ValidationError("transition shape does not match num_states")
            return TransitionMatrix(rows)
        if self.p is not None:
            return TransitionMatrix.binary(self.p, self.q)
        return TransitionMatrix(sticky_matrix(self.num_states))

    def prior(self) -> MarkovChainPrior:
        return MarkovChainPrior(self.transition_matrix(), self.length)

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(doc) - names
        if unknown:
            raise ValidationError(f"unknown config fields {sorted(unknown)}")
        return cls(**doc)

    def to_json(self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass
class Report:
    config: ExperimentConfig
    # (eps_p, mechanism, metric) -> (mean, stderr)
    rows: dict[tuple[float, str, str], tuple[float, float]]
    runtime: float
    ledgers: dict[tuple[int, float, str], Ledger] = field(default_factory=dict, repr=False)

    def metric_names(self) -> list[str]:
        return [f"acc@{k}" for k in range(1, self.config.K + 1)] + ["hit_rate", "ndcg", "l1"]

    def mean(self, eps_p: float, mechanism: str, metric: str) -> float:
        return self.rows[(eps_p, mechanism, metric)][0]

    def to_json(self) -> dict[str, Any]:
        return {
            "config": self.config.to_json(),
            "runtime_seconds": self.runtime,
            "rows": [
                {"eps_p": e, "mechanism": m, "metric": k, "mean": v,
                 "stderr": None if not math.isfinite(s) else s}
                for (e, m, k), (v, s) in self.rows.items()
            ],
        }


def generate_dataset(config: ExperimentConfig, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Sequences of shape (num_sequences, length) and the count of each state."""
    seqs = sample_chains(config.prior(), config.num_sequences, rng)
    counts = np.bincount(seqs.ravel(), minlength=config.num_states)
    return seqs, counts


def _score(pred: Sequence[int], counts: np.ndarray, K: int) -> dict[str, float]:
    order = true_ranking(counts)
    out = {f"acc@{k}": float(acc_at_k(pred, order, k)) for k in range(1, K + 1)}
    out["hit_rate"] = hit_rate_at_k(pred, order[:K])
    out["ndcg"] = ndcg_at_k(pred, counts, K)
    out["l1"] = float(l1_count_error(pred, counts, K))
    return out


def _laplace_topk(counts: np.ndarray, K: int, curve: AbCurve, eps_p: float, entry_count: int,
                  rng: np.random.Generator, seed: int, kind: str) -> tuple[list[int], list[MechanismReceipt]]:
    """m count queries at eps_P / m each, noisy counts ranked without clamping."""
    m = counts.size
    per_query = eps_p / m
    eps_dp, point = best_epsilon_dp(curve, per_query, entry_count)
    noisy = counts + sample_laplace(1.0 / eps_dp, rng, size=m)
    receipts = [MechanismReceipt(float(noisy[r]), eps_dp, point, per_query, kind, seed, entry_count)
                for r in range(m)]
    pred = sorted(range(m), key=lambda r: (-noisy[r], r))[:K]
    return pred, receipts


def _exp_topk(counts: np.ndarray, K: int, curve: AbCurve, eps_p: float, entry_count: int,
              rng: np.random.Generator, seed: int, kind: str) -> tuple[list[int], list[MechanismReceipt]]:
    eps_dp, point = best_epsilon_dp(curve, eps_p, entry_count)
    pred = topk_from_scores(counts, K, eps_dp / K, 1.0, rng)
    return pred, [MechanismReceipt(tuple(pred), eps_dp, point, eps_p, kind, seed, entry_count)]


def run_experiment(config: ExperimentConfig, curve: AbCurve | None = None) -> Report:
    """Every (trial, group, eps_P, mechanism) cell; metrics averaged over trials.

    The Pufferfish curve defaults to the exact window-oracle curve of the chain.
    Group DP treats the whole sequence (|I| = length) as the group, since
    sequences are independent under the prior.
    """
    start = time.perf_counter()
    prior = config.prior()
    if curve is None:
        curve = markov_window_curve(prior)
    group_curve = group_dp_curve(config.length)
    entry_count = config.length
    names = [f"acc@{k}" for k in range(1, config.K + 1)] + ["hit_rate", "ndcg", "l1"]
    samples: dict[tuple[float, str, str], list[float]] = {
        (e, m, k): [] for e in config.eps_p for m in config.mechanisms for k in names
    }
    ledgers: dict[tuple[int, float, str], Ledger] = {}
    for trial in range(config.trials):
        seed_seq = np.random.SeedSequence([config.seed, trial])
        data_rng, mech_seed = (np.random.default_rng(s) for s in seed_seq.spawn(2))
        per_group = {k: [] for k in samples}
        for _ in range(config.groups):
            _, counts = generate_dataset(config, data_rng)
            for eps in config.eps_p:
                for mech in config.mechanisms:
                    if mech == "ours_exp":
                        pred, rec = _exp_topk(counts, config.K, curve, eps, entry_count, mech_seed, trial, mech)
                    elif mech == "group_dp_exp":
                        pred, rec = _exp_topk(counts, config.K, group_curve, eps, entry_count, mech_seed, trial, mech)
                    elif mech == "mqm":
                        pred, rec = _laplace_topk(counts, config.K, curve, eps, entry_count, mech_seed, trial, mech)
                    else:
                        pred, rec = _laplace_topk(counts, config.K, group_curve, eps, entry_count,
                                                  mech_seed, trial, mech)
                    ledger = ledgers.setdefault((trial, eps, mech), Ledger(f"{mech}@{eps}"))
                    for r in rec:
                        ledger.record(r)
                    for name, value in _score(pred, counts, config.K).items():
                        per_group[(eps, mech, name)].append(value)
        for key, vals in per_group.items():
            samples[key].append(float(np.mean(vals)))
    rows = {}
    for key, vals in samples.items():
        arr = np.asarray(vals)
        se = float(arr.std(ddof=1) / math.sqrt(arr.size)) if arr.size > 1 else math.nan
        rows[key] = (float(arr.mean()), se)
    return Report(config, rows, time.perf_counter() - start, ledgers)


def ledger_consumption(ledger: Ledger) -> float:
    """Sum of eps_P charged to the ledger."""
    return math.fsum(e.eps_p for e in ledger)


def ledger_total(ledger: Ledger) -> float:
    return compose_pufferfish(ledger)


def emit_report(report: Report, fmt: str, path: str | None = None) -> str:
    """Render as csv, json or markdown; write to ``path`` when given."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(REPORT_HEADER)
        for (e, m, k), (v, s) in report.rows.items():
            writer.writerow([repr(e), m, k, repr(v), repr(s)])
        text = buf.getvalue()
    elif fmt == "json":
        text = json.dumps(report.to_json(), indent=2) + "\n"
    elif fmt in ("markdown", "markdown-table", "md"):
        text = _markdown(report)
    else:
        raise ValidationError(f"unknown report format {fmt!r}")
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


def _markdown(report: Report) -> str:
    metrics = report.metric_names()
    mechs = report.config.mechanisms
    head = ["eps_p"] + [f"{m} {k}" for m in mechs for k in metrics]
    lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
    for e in report.config.eps_p:
        cells = [f"{e:g}"] + [f"{report.mean(e, m, k):.4f}" for m in mechs for k in metrics]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines) + "\n"


def parse_csv_report(text: str) -> dict[tuple[float, str, str], tuple[float, float]]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != REPORT_HEADER:
        raise ValidationError(f"unexpected header {header}")
    return {(float(e), m, k): (float(v), float(s)) for e, m, k, v, s in reader}
