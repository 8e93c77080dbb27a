import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pufferfish.composition import (
    EXHAUSTED,
    Ledger,
    LedgerEntry,
    compose_linear_dp,
    compose_pufferfish,
    remaining_budget,
)
from pufferfish.errors import ValidationError
from pufferfish.mechanisms import MechanismReceipt


def entry_strategy():
    return st.floats(0.01, 10.0).flatmap(
        lambda eps: st.tuples(st.just(eps), st.floats(0.0, eps, exclude_max=True), st.integers(1, 50))
    )


class TestEntries:
    def test_a_must_be_below_eps(self):
        with pytest.raises(ValidationError):
            LedgerEntry(1.0, 1.0, 2)
        with pytest.raises(ValidationError):
            LedgerEntry(1.0, -0.1, 2)

    def test_from_fallback_receipt(self):
        r = MechanismReceipt(0, 0.1, None, 2.0, "laplace", 3, entry_count=20)
        e = LedgerEntry.from_receipt(r)
        assert (e.eps_p, e.a, e.b, e.fallback) == (2.0, 0.0, 20, True)

    def test_from_receipt(self):
        r = MechanismReceipt(0, 0.25, (2, 0.5), 1.0, "laplace", 3, entry_count=20)
        e = LedgerEntry.from_receipt(r, prior="chain")
        assert (e.eps_p, e.a, e.b, e.prior) == (1.0, 0.5, 2, "chain")

    def test_json(self):
        e = LedgerEntry(1.0, 0.2, 3, "laplace", 7)
        assert e.to_json() == {"eps_p": 1.0, "a": 0.2, "b": 3, "kind": "laplace", "seed": 7}
        assert LedgerEntry.from_json(e.to_json()) == e
        with pytest.raises(ValidationError):
            LedgerEntry.from_json({"a": 0.1})


class TestFormula:
    def test_worked_example(self):
        assert compose_pufferfish([LedgerEntry(1.0, 0.2, 1), LedgerEntry(1.5, 0.3, 1)]) == 2.3

    def test_empty(self):
        assert compose_pufferfish([]) == 0.0
        assert compose_linear_dp([]) == 0.0

    def test_single_entry(self):
        assert compose_pufferfish([LedgerEntry(1.7, 0.4, 2)]) == 1.7

    def test_zero_a_is_linear(self):
        entries = [LedgerEntry(e, 0.0, 1) for e in (0.1, 0.2, 0.3)]
        assert compose_pufferfish(entries) == compose_linear_dp([0.1, 0.2, 0.3])

    def test_linear_rejects_negative(self):
        with pytest.raises(ValidationError):
            compose_linear_dp([1.0, -0.5])

    @settings(max_examples=500, deadline=None)
    @given(st.lists(entry_strategy(), min_size=1, max_size=12))
    def test_sub_additive(self, raw):
        entries = [LedgerEntry(e, a, b) for e, a, b in raw]
        total = compose_pufferfish(entries)
        assert total <= compose_linear_dp(e.eps_p for e in entries) * (1 + 1e-12)
        assert total >= max(e.eps_p for e in entries) * (1 - 1e-12)

    @settings(max_examples=200, deadline=None)
    @given(st.lists(entry_strategy(), min_size=1, max_size=8), st.randoms())
    def test_order_invariant(self, raw, rnd):
        entries = [LedgerEntry(e, a, b) for e, a, b in raw]
        shuffled = entries[:]
        rnd.shuffle(shuffled)
        assert compose_pufferfish(shuffled) == compose_pufferfish(entries)


class TestLedger:
    def test_cross_prior_rejected(self):
        ledger = Ledger("x")
        ledger.append(LedgerEntry(1.0, 0.1, 1, prior="chain-a"))
        with pytest.raises(ValidationError):
            ledger.append(LedgerEntry(1.0, 0.1, 1, prior="chain-b"))

    def test_file_round_trip(self, tmp_path):
        path = str(tmp_path / "ledger.jsonl")
        ledger = Ledger.load(path)
        assert len(ledger) == 0
        ledger.append_to_file(path, LedgerEntry(1.0, 0.2, 1))
        ledger.append_to_file(path, LedgerEntry(1.5, 0.3, 4, fallback=False))
        back = Ledger.load(path)
        assert compose_pufferfish(back) == 2.3
        lines = open(path).read().splitlines()
        assert [json.loads(l)["eps_p"] for l in lines] == [1.0, 1.5]

    def test_bad_line(self, tmp_path):
        path = tmp_path / "ledger.jsonl"
        path.write_text("{not json}\n")
        with pytest.raises(ValidationError):
            Ledger.load(str(path))

    def test_remaining(self):
        ledger = [LedgerEntry(1.0, 0.2, 1), LedgerEntry(1.5, 0.3, 1)]
        assert remaining_budget(ledger, 3.0) == pytest.approx(0.7)
        assert remaining_budget(ledger, 2.3) == EXHAUSTED
        with pytest.raises(ValidationError):
            remaining_budget(ledger, 0.0)
