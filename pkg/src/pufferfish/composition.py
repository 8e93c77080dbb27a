"""Budget accounting: linear DP composition and sub-additive Pufferfish composition."""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Any, Iterable, Sequence

from pufferfish.errors import ValidationError
from pufferfish.mechanisms import MechanismReceipt

EXHAUSTED = "exhausted"


@dataclass(frozen=True)
class LedgerEntry:
    """One (eps_P, a, b) triple; fallback entries carry a = 0."""

    eps_p: float
    a: float
    b: int | None
    kind: str = ""
    seed: int | None = None
    fallback: bool = False
    prior: str | None = None

    def __post_init__(self) -> None:
        if not self.eps_p >= 0:
            raise ValidationError("eps_p must be nonnegative")
        if self.fallback:
            if self.a != 0:
                raise ValidationError("fallback entries must have a = 0")
        elif not (0 <= self.a < self.eps_p or (self.a == 0 and self.eps_p == 0)):
            raise ValidationError(f"entry needs 0 <= a < eps_p, got a={self.a}, eps_p={self.eps_p}")

    @classmethod
    def from_receipt(cls, receipt: MechanismReceipt, prior: str | None = None) -> "LedgerEntry":
        if receipt.fallback:
            # group DP composes as plain DP: a = 0 and eps_P = |I| * eps_DP
            return cls(receipt.entry_count * receipt.eps_dp, 0.0, receipt.entry_count,
                       receipt.kind, receipt.seed, True, prior)
        b, a = receipt.point
        return cls(receipt.eps_p, a, b, receipt.kind, receipt.seed, False, prior)

    def to_json(self) -> dict[str, Any]:
        doc: dict[str, Any] = {"eps_p": self.eps_p, "a": self.a, "b": self.b, "kind": self.kind, "seed": self.seed}
        if self.fallback:
            doc["fallback"] = True
        if self.prior is not None:
            doc["prior"] = self.prior
        return doc

    @classmethod
    def from_json(cls, doc: dict[str, Any]) -> "LedgerEntry":
        try:
            return cls(
                float(doc["eps_p"]),
                float(doc["a"]),
                None if doc.get("b") is None else int(doc["b"]),
                str(doc.get("kind", "")),
                doc.get("seed"),
                bool(doc.get("fallback", False)),
                doc.get("prior"),
            )
        except KeyError as exc:
            raise ValidationError(f"ledger line is missing {exc}") from exc


@dataclass
class Ledger:
    """Append-only list of entries sharing one prior family."""

    label: str = ""
    prior: str | None = None
    entries: list[LedgerEntry] = field(default_factory=list)

    def append(self, entry: LedgerEntry) -> None:
        if entry.prior is not None:
            if self.prior is None:
                self.prior = entry.prior
            elif entry.prior != self.prior:
                raise ValidationError(f"entry prior {entry.prior!r} differs from ledger prior {self.prior!r}")
        self.entries.append(entry)

    def record(self, receipt: MechanismReceipt) -> LedgerEntry:
        entry = LedgerEntry.from_receipt(receipt, self.prior)
        self.append(entry)
        return entry

    def __len__(self) -> int:
        return len(self.entries)

    def __iter__(self):
        return iter(tuple(self.entries))

    @classmethod
    def load(cls, path: str, label: str = "") -> "Ledger":
        ledger = cls(label)
        if not os.path.exists(path):
            return ledger
        with open(path) as fh:
            for lineno, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    doc = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValidationError(f"{path}:{lineno}: bad JSON") from exc
                ledger.append(LedgerEntry.from_json(doc))
        return ledger

    def append_to_file(self, path: str, entry: LedgerEntry) -> None:
        self.append(entry)
        with open(path, "a") as fh:
            fh.write(json.dumps(entry.to_json()) + "\n")


def compose_linear_dp(epsilons: Iterable[float]) -> float:
    """Sum of the budgets."""
    eps = list(epsilons)
    if any(e < 0 for e in eps):
        raise ValidationError("budgets must be nonnegative")
    return math.fsum(eps)


def compose_pufferfish(ledger: Ledger | Sequence[LedgerEntry]) -> float:
    """max_l a_l + sum_l eps_l - sum_l a_l, the correlation penalty paid once."""
    entries = list(ledger)
    if not entries:
        return 0.0
    a = [e.a for e in entries]
    return math.fsum([e.eps_p for e in entries] + [max(a)] + [-x for x in a])


def remaining_budget(ledger: Ledger | Sequence[LedgerEntry], cap: float) -> float | str:
    """cap minus the composed total, or EXHAUSTED when nothing is left."""
    if not cap > 0:
        raise ValidationError("cap must be positive")
    left = cap - compose_pufferfish(ledger)
    return EXHAUSTED if left <= 0 else left
