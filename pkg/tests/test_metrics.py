import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pufferfish.errors import ValidationError
from pufferfish.metrics import acc_at_k, hit_rate_at_k, l1_count_error, ndcg_at_k, true_ranking

COUNTS = [5, 9, 9, 1, 0]


def test_ranking_ties_by_id():
    assert true_ranking(COUNTS) == [1, 2, 0, 3, 4]


def test_acc():
    order = true_ranking(COUNTS)
    assert acc_at_k([1, 0, 2], order, 1) == 1
    assert acc_at_k([1, 0, 2], order, 2) == 0
    with pytest.raises(ValidationError):
        acc_at_k([1], order, 2)


def test_hit_rate():
    assert hit_rate_at_k([0, 3, 2], [1, 2, 0]) == pytest.approx(2 / 3)
    with pytest.raises(ValidationError):
        hit_rate_at_k([0, 0, 2], [1, 2, 0])


def test_ndcg_by_hand():
    got = ndcg_at_k([0, 1], COUNTS, 2)
    expected = (5 + 9 / math.log2(3)) / (9 + 9 / math.log2(3))
    assert got == pytest.approx(expected, abs=1e-15)


def test_ndcg_all_zero_counts():
    assert ndcg_at_k([0, 1], [0, 0, 0], 2) == 1.0


def test_l1():
    assert l1_count_error([0, 3], COUNTS, 2) == 4 + 8


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 50), min_size=2, max_size=10), st.data())
def test_metric_ranges(counts, data):
    K = data.draw(st.integers(1, len(counts)))
    pred = data.draw(st.permutations(range(len(counts))))[:K]
    order = true_ranking(counts)
    assert 0.0 <= ndcg_at_k(pred, counts, K) <= 1.0 + 1e-12
    assert 0.0 <= hit_rate_at_k(pred, order[:K]) <= 1.0
    assert l1_count_error(pred, counts, K) >= 0
    # the true ranking is perfect on every metric
    assert ndcg_at_k(order[:K], counts, K) == pytest.approx(1.0)
    assert hit_rate_at_k(order[:K], order[:K]) == 1.0
    assert l1_count_error(order[:K], counts, K) == 0
    assert all(acc_at_k(order[:K], order, k) == 1 for k in range(1, K + 1))
