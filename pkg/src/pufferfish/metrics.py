"""Ranking metrics for Top-K count queries.

Ground-truth rankings order categories by count, ties broken by ascending id.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from pufferfish.errors import ValidationError


def true_ranking(true_counts: Sequence[float]) -> list[int]:
    """Category ids sorted by count descending, then id ascending."""
    counts = np.asarray(true_counts)
    return sorted(range(counts.size), key=lambda i: (-counts[i], i))


def _check_predicted(predicted: Sequence[int]) -> list[int]:
    pred = [int(p) for p in predicted]
    if len(set(pred)) != len(pred):
        raise ValidationError("predicted categories must be distinct")
    return pred


def acc_at_k(predicted: Sequence[int], true_order: Sequence[int], k: int) -> int:
    """1 if the k-th prediction (1-indexed) matches the k-th true category."""
    if not 1 <= k <= len(predicted):
        raise ValidationError(f"k={k} out of range")
    return int(int(predicted[k - 1]) == int(true_order[k - 1]))


def hit_rate_at_k(predicted: Sequence[int], true_topk: Sequence[int]) -> float:
    """Fraction of the true top-K found anywhere in the prediction."""
    if len(predicted) != len(true_topk) or not true_topk:
        raise ValidationError("predicted and true top-K must have the same positive length")
    pred = _check_predicted(predicted)
    return len(set(pred) & {int(t) for t in true_topk}) / len(true_topk)


def _dcg(gains: Sequence[float]) -> float:
    return math.fsum(g / math.log2(k + 2) for k, g in enumerate(gains))


def ndcg_at_k(predicted: Sequence[int], true_counts: Sequence[float], K: int) -> float:
    """DCG of the predicted order over DCG of the ideal order, with true counts as gains."""
    counts = np.asarray(true_counts, dtype=float)
    if not 1 <= K <= counts.size:
        raise ValidationError(f"K={K} out of range")
    pred = _check_predicted(predicted)[:K]
    ideal = _dcg([counts[i] for i in true_ranking(counts)[:K]])
    if ideal == 0:
        return 1.0
    return _dcg([counts[i] for i in pred]) / ideal


def l1_count_error(predicted: Sequence[int], true_counts: Sequence[float], K: int) -> float:
    """sum_k |count(predicted[k]) - count(true k-th)|."""
    counts = np.asarray(true_counts)
    if not 1 <= K <= counts.size:
        raise ValidationError(f"K={K} out of range")
    pred = _check_predicted(predicted)[:K]
    order = true_ranking(counts)[:K]
    total = sum(abs(counts[p] - counts[t]) for p, t in zip(pred, order))
    return total.item() if hasattr(total, "item") else total
