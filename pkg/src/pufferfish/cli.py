"""Command-line interface.

Exit codes: 0 success, 2 validation error, 3 budget exhausted.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from typing import Any, Sequence

import numpy as np

from pufferfish import collapse
from pufferfish.bench import ExperimentConfig, emit_report, run_experiment
from pufferfish.composition import EXHAUSTED, Ledger, LedgerEntry, compose_linear_dp, compose_pufferfish, remaining_budget
from pufferfish.errors import BudgetExhaustedError, NumericError, ValidationError
from pufferfish.influence import AbCurve, gaussian_ab_curve, markov_ab_curve, markov_window_curve
from pufferfish.mechanisms import MechanismReceipt, UtilityFunction, pufferfish_exponential_topk, pufferfish_laplace, Query
from pufferfish.nfc import LikelihoodMatrix, check_nfc, primal_nfc_epsilon, product_matrix, secret_likelihood_matrix
from pufferfish.priors import GaussianPrior, SecretPair, load_prior, read_sequences

EXIT_OK, EXIT_VALIDATION, EXIT_BUDGET = 0, 2, 3
FORMAT_EXT = {"csv": "csv", "json": "json", "markdown": "md"}


def _jsonable(value: Any) -> Any:
    if isinstance(value, float) and not math.isfinite(value):
        return "inf" if value > 0 else "-inf"
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.generic):
        return value.item()
    return value


def _emit(args: argparse.Namespace, name: str, doc: Any) -> None:
    text = json.dumps(_jsonable(doc), indent=2)
    print(text)
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, name), "w") as fh:
            fh.write(text + "\n")


def _cmd_curve(args: argparse.Namespace) -> int:
    if args.prior:
        prior = load_prior(args.prior)
        if isinstance(prior, GaussianPrior):
            curve = gaussian_ab_curve(prior, args.delta, b_max=args.b_max)
        else:
            curve = markov_window_curve(prior, args.b_max)
    elif args.p is not None and args.q is not None:
        curve = markov_ab_curve(args.p, args.q, args.b_max or 10)
    else:
        raise ValidationError("curve needs --p and --q, or --prior")
    _emit(args, "curve.json", curve.to_json())
    return EXIT_OK


def _cmd_mechanize(args: argparse.Namespace) -> int:
    sequences = read_sequences(args.data)
    states = args.states or (max(max(s) for s in sequences) + 1)
    curve = AbCurve.load(args.curve)
    entry_count = max(len(s) for s in sequences)
    flat = np.concatenate([np.asarray(s) for s in sequences])
    counts = np.bincount(flat, minlength=states).astype(float)
    ledger = Ledger.load(args.ledger) if args.ledger else Ledger()
    if args.cap is not None:
        left = remaining_budget(ledger, args.cap)
        projected = compose_pufferfish(list(ledger) + [LedgerEntry(args.eps_p, 0.0, None, fallback=True)])
        if left == EXHAUSTED or projected > args.cap * (1 + 1e-12):
            raise BudgetExhaustedError(f"ledger total {compose_pufferfish(ledger):g} leaves no room for {args.eps_p:g}")
    rng = np.random.default_rng(args.seed)
    if args.mechanism == "laplace":
        query = Query(lambda d: counts, 1.0, states)
        out, receipt = pufferfish_laplace(flat, query, curve, args.eps_p, rng, entry_count, args.seed)
    else:
        util = UtilityFunction(lambda d, r: counts[r], 1.0, tuple(range(states)))
        out, receipt = pufferfish_exponential_topk(flat, util, args.k, curve, args.eps_p, rng, entry_count, args.seed)
    if args.ledger:
        ledger.append_to_file(args.ledger, LedgerEntry.from_receipt(receipt))
    _emit(args, "receipt.json", receipt.to_json())
    return EXIT_OK


def _cmd_bench(args: argparse.Namespace) -> int:
    doc: dict[str, Any] = {}
    if args.config:
        with open(args.config) as fh:
            doc = json.load(fh)
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.trials is not None:
        doc["trials"] = args.trials
    config = ExperimentConfig.from_json(doc)
    report = run_experiment(config)
    fmt = args.format or "csv"
    path = None
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"report.{FORMAT_EXT.get(fmt, fmt)}")
    text = emit_report(report, fmt, path)
    print(text, end="")
    return EXIT_OK


def _exclusive_pairs(L: LikelihoodMatrix) -> list[SecretPair]:
    tags = L.secret_tags()
    pairs = []
    for i, a in enumerate(tags):
        for b in tags[i + 1:]:
            if not any(a in d.secrets and b in d.secrets for d in L.datasets):
                pairs.append(SecretPair.tagged(a, b))
    return pairs


def _cmd_nfc(args: argparse.Namespace) -> int:
    L = LikelihoodMatrix.load(args.matrix)
    if args.pairs:
        pairs = [SecretPair.tagged(*p.split(":", 1)) for p in args.pairs]
    else:
        pairs = _exclusive_pairs(L)
    if not pairs:
        raise ValidationError("no mutually exclusive secret pairs found")
    report = check_nfc(L, pairs, args.eps)
    print(f"{'pair':<32} {'left':>5} {'eps0':>12} result")
    for row in report.rows:
        eps0 = "inf" if not math.isfinite(row.eps0) else f"{row.eps0:.6g}"
        print(f"{row.pair:<32} {row.left:>5} {eps0:>12} {'pass' if row.passed else 'FAIL'}")
    print("necessary conditions hold" if report.passed else "necessary conditions violated")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "certificates.json"), "w") as fh:
            json.dump(_jsonable(report.to_json()), fh, indent=2)
    return EXIT_OK


def _worst_eps0(L: LikelihoodMatrix, pair: SecretPair) -> float:
    return max(primal_nfc_epsilon(L, p, i) for p in (pair, pair.reversed()) for i in L.rows_where(p.left))


def _collapse_certificate(example: int) -> dict[str, Any]:
    if example == 1:
        sc = collapse.example1_scenario()
        L = collapse.example1_likelihood(sc)
        probs, tags = sc.prior.probs, [collapse.SIGMA1, collapse.SIGMA2]
    elif example == 2:
        L = collapse.example2_likelihood(3)
        probs, tags = np.full(8, 1 / 8), ["x0=0", "x0=1"]
    else:
        sc = collapse.example3_scenario()
        L = collapse.example3_likelihood(sc)
        single = secret_likelihood_matrix(L, sc.prior.probs, [collapse.SIGMA1, collapse.SIGMA2])
        pair = SecretPair.tagged(collapse.SIGMA1, collapse.SIGMA2)
        return {
            "epsilon_bound": collapse.example3_epsilon(sc.bounds),
            "single_run_eps0": _worst_eps0(single, pair),
        }
    pair = SecretPair.tagged(*tags)
    single = secret_likelihood_matrix(L, probs, tags)
    double = secret_likelihood_matrix(product_matrix(L, 2), probs, tags)
    return {
        "single_run_eps0": _worst_eps0(single, pair),
        "two_run_eps0": _worst_eps0(double, pair),
    }


def _cmd_collapse(args: argparse.Namespace) -> int:
    scenario = {1: collapse.example1_scenario, 2: collapse.example2_scenario, 3: collapse.example3_scenario}[args.example]()
    rng = np.random.default_rng(args.seed)
    est = collapse.estimate_expected_runs(scenario, args.trials, rng)
    doc = {"example": args.example, **est.to_json(), "certificate": _collapse_certificate(args.example)}
    if args.example == 1:
        doc["bound"] = collapse.example1_runs_bound(scenario)
        doc["exact"] = collapse.example1_expected_runs(scenario)
    else:
        doc["exact"] = 3.0
    _emit(args, f"collapse_example{args.example}.json", doc)
    return EXIT_OK


def _cmd_budget(args: argparse.Namespace) -> int:
    ledger = Ledger.load(args.ledger)
    doc: dict[str, Any] = {
        "entries": len(ledger),
        "linear_total": compose_linear_dp(e.eps_p for e in ledger),
        "pufferfish_total": compose_pufferfish(ledger),
    }
    code = EXIT_OK
    if args.cap is not None:
        left = remaining_budget(ledger, args.cap)
        doc["cap"] = args.cap
        doc["remaining"] = left
        if left == EXHAUSTED:
            code = EXIT_BUDGET
    _emit(args, "budget.json", doc)
    return code


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--config", default=argparse.SUPPRESS)
    common.add_argument("--out", default=argparse.SUPPRESS)
    common.add_argument("--format", choices=["csv", "json", "markdown"], default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="pufferfish", parents=[common],
                                     description="Composable Pufferfish mechanisms and audits.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("curve", parents=[common], help="compute an (a, b)-influence curve")
    p.add_argument("--p", type=float)
    p.add_argument("--q", type=float)
    p.add_argument("--b-max", type=int)
    p.add_argument("--prior", help="prior JSON (markov or gaussian)")
    p.add_argument("--delta", type=float, default=0.1)
    p.set_defaults(func=_cmd_curve)

    p = sub.add_parser("mechanize", parents=[common], help="run a mechanism on sequence data")
    p.add_argument("--data", required=True)
    p.add_argument("--curve", required=True)
    p.add_argument("--eps-p", type=float, required=True)
    p.add_argument("--mechanism", choices=["laplace", "exp-topk"], default="exp-topk")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--states", type=int)
    p.add_argument("--ledger")
    p.add_argument("--cap", type=float)
    p.set_defaults(func=_cmd_mechanize)

    p = sub.add_parser("bench", parents=[common], help="run the Top-K benchmark")
    p.add_argument("--trials", type=int)
    p.set_defaults(func=_cmd_bench)

    p = sub.add_parser("nfc-check", parents=[common], help="audit NfC constraints")
    p.add_argument("--matrix", required=True)
    p.add_argument("--eps", type=float, required=True)
    p.add_argument("--pairs", nargs="*", help="tag pairs as left:right")
    p.set_defaults(func=_cmd_nfc)

    p = sub.add_parser("collapse-demo", parents=[common], help="expected runs to reveal the secret")
    p.add_argument("--example", type=int, choices=[1, 2, 3], required=True)
    p.add_argument("--trials", type=int, default=10_000)
    p.set_defaults(func=_cmd_collapse)

    p = sub.add_parser("budget", parents=[common], help="ledger totals")
    p.add_argument("--ledger", required=True)
    p.add_argument("--cap", type=float)
    p.set_defaults(func=_cmd_budget)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("seed", "config", "out", "format"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.func(args)
    except BudgetExhaustedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except (ValidationError, NumericError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
