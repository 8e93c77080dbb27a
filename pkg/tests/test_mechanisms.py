import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pufferfish.errors import ValidationError
from pufferfish.influence import AbCurve, markov_window_curve
from pufferfish.mechanisms import (
    MechanismReceipt,
    Query,
    UtilityFunction,
    exponential_probabilities,
    exponential_select,
    group_dp_curve,
    group_dp_epsilon,
    mqm_laplace_baseline,
    pufferfish_exponential_topk,
    pufferfish_laplace,
    sample_laplace,
    topk_from_scores,
)
from pufferfish.priors import MarkovChainPrior, TransitionMatrix, enumerate_markov_prior


def exact_topk_order_prob(scores, order, eps_round, sens):
    """Probability of drawing ``order`` by sequential softmax without replacement."""
    remaining = list(range(len(scores)))
    prob = 1.0
    for pick in order:
        w = [math.exp(eps_round * scores[r] / (2 * sens)) for r in remaining]
        prob *= w[remaining.index(pick)] / sum(w)
        remaining.remove(pick)
    return prob


class TestLaplace:
    def test_variance_and_mean(self):
        x = sample_laplace(2.0, np.random.default_rng(0), size=1_000_000)
        assert abs(x.mean()) < 0.01
        assert x.var() == pytest.approx(8.0, rel=0.02)

    def test_cdf(self):
        x = sample_laplace(1.0, np.random.default_rng(1), size=200_000)
        for t in (-2.0, -0.5, 0.0, 1.0):
            expected = 0.5 * math.exp(t) if t < 0 else 1 - 0.5 * math.exp(-t)
            assert np.mean(x <= t) == pytest.approx(expected, abs=0.005)

    def test_scalar_and_finite(self):
        rng = np.random.default_rng(2)
        assert isinstance(sample_laplace(1.0, rng), float)
        assert np.all(np.isfinite(sample_laplace(1.0, rng, size=100_000)))

    def test_bad_scale(self):
        with pytest.raises(ValidationError):
            sample_laplace(0.0, np.random.default_rng(0))

    def test_pufferfish_laplace_scale(self):
        curve = AbCurve(((2, 0.5),))
        query = Query(lambda d: np.array([float(np.sum(d)), 0.0]), 1.0, 2)
        rng = np.random.default_rng(3)
        outs = []
        for _ in range(20_000):
            noisy, receipt = pufferfish_laplace(np.zeros(10), query, curve, 1.5, rng)
            outs.append(noisy)
        assert receipt.eps_dp == pytest.approx(0.5)
        assert receipt.b == 2 and receipt.a == 0.5
        # scale = L * d / eps = 4, variance 32
        assert np.var(np.array(outs)[:, 0]) == pytest.approx(32.0, rel=0.05)

    def test_query_validation(self):
        with pytest.raises(ValidationError):
            Query(lambda d: d, 0.0, 1)
        q = Query(lambda d: np.zeros(3), 1.0, 2)
        with pytest.raises(ValidationError):
            q(None)


class TestExponential:
    def test_probabilities(self):
        p = exponential_probabilities(np.array([0.0, 1.0, 2.0]), 2.0, 1.0)
        w = np.exp([0.0, 1.0, 2.0])
        np.testing.assert_allclose(p, w / w.sum(), atol=1e-15)

    def test_large_scores_stable(self):
        p = exponential_probabilities(np.array([1e6, 1e6 - 1]), 2.0, 1.0)
        assert p[0] == pytest.approx(1 / (1 + math.exp(-1)))

    def test_zero_budget_uniform(self):
        np.testing.assert_allclose(exponential_probabilities(np.array([1.0, 5.0, 9.0]), 0.0, 1.0), 1 / 3)

    def test_select_frequencies(self):
        u = UtilityFunction(lambda d, r: d[r], 1.0, (0, 1, 2, 3))
        data = [0.0, 1.0, 3.0, 2.0]
        probs = exponential_probabilities(np.array(data), 1.0, 1.0)
        rng = np.random.default_rng(4)
        n = 200_000
        counts = np.bincount([exponential_select(data, u, 1.0, rng) for _ in range(n)], minlength=4)
        se = np.sqrt(probs * (1 - probs) / n)
        assert np.all(np.abs(counts / n - probs) <= 3 * se)

    def test_topk_order_probability(self):
        scores = [3.0, 1.0, 2.0, 0.0]
        order = (0, 2, 1)
        exact = exact_topk_order_prob(scores, order, 1.0, 1.0)
        rng = np.random.default_rng(5)
        n = 100_000
        hits = sum(tuple(topk_from_scores(scores, 3, 1.0, 1.0, rng)) == order for _ in range(n))
        se = math.sqrt(exact * (1 - exact) / n)
        assert abs(hits / n - exact) <= 3 * se

    def test_topk_orders_sum_to_one(self):
        scores = [3.0, 1.0, 2.0, 0.0]
        total = sum(exact_topk_order_prob(scores, o, 0.7, 1.0) for o in itertools.permutations(range(4), 2))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_topk_distinct(self):
        picks = topk_from_scores(np.zeros(6), 6, 1.0, 1.0, np.random.default_rng(6))
        assert sorted(picks) == list(range(6))

    def test_k_validation(self):
        u = UtilityFunction(lambda d, r: 0.0, 1.0, (0, 1))
        with pytest.raises(ValidationError):
            pufferfish_exponential_topk([0], u, 3, AbCurve(((1, 0.0),)), 1.0, np.random.default_rng(0))

    def test_utility_validation(self):
        with pytest.raises(ValidationError):
            UtilityFunction(lambda d, r: 0.0, 0.0, (0,))
        with pytest.raises(ValidationError):
            UtilityFunction(lambda d, r: 0.0, 1.0, ())


class TestReceipts:
    def test_rejects_overspend(self):
        with pytest.raises(ValidationError):
            MechanismReceipt(0, 1.0, (2, 0.5), 2.0, "laplace")

    def test_fallback_must_use_group_budget(self):
        MechanismReceipt(0, 0.1, None, 1.0, "laplace", entry_count=10)
        with pytest.raises(ValidationError):
            MechanismReceipt(0, 0.2, None, 1.0, "laplace", entry_count=10)

    def test_json(self):
        r = MechanismReceipt((np.int64(1), 2), 0.25, (2, 0.5), 1.0, "exponential-topk", 9, 4)
        doc = r.to_json()
        assert doc["output"] == [1, 2]
        assert (doc["a"], doc["b"], doc["fallback"]) == (0.5, 2, False)

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.01, 10.0), st.integers(1, 500))
    def test_topk_receipts_respect_budget(self, eps_p, count):
        curve = AbCurve(((1, 0.9), (5, 0.3), (20, 0.01)))
        u = UtilityFunction(lambda d, r: float(r), 1.0, (0, 1, 2))
        _, r = pufferfish_exponential_topk(None, u, 2, curve, eps_p, np.random.default_rng(0), count)
        if r.fallback:
            assert r.eps_dp * count == pytest.approx(eps_p)
        else:
            assert r.b * r.eps_dp + r.a <= eps_p * (1 + 1e-12)


class TestBaselines:
    def test_group_dp(self):
        assert group_dp_epsilon(2.0, 8) == 0.25
        assert group_dp_curve(8).points == ((8, 0.0),)

    def test_mqm_splits_budget(self):
        queries = [Query(lambda d, j=j: np.array([float(np.sum(np.asarray(d) == j))]), 1.0, 1) for j in range(4)]
        data = np.array([0, 1, 1, 2, 3, 3, 3, 0])
        answers, receipts = mqm_laplace_baseline(data, queries, 0.8, 0.7, 2.0, 8, np.random.default_rng(7))
        assert answers.shape == (4,)
        assert all(r.eps_p == pytest.approx(0.5) for r in receipts)

    def test_mqm_needs_a_curve(self):
        with pytest.raises(ValidationError):
            mqm_laplace_baseline([0], [Query(lambda d: np.zeros(1), 1.0, 1)], None, None, 1.0, 3,
                                 np.random.default_rng(0))


def exact_output_odds(prior, c, eps_p, runs, k=1):
    """Worst log posterior-odds change over outputs of `runs` independent Top-K runs.

    Uses the count utility over the two states (sensitivity 1) and the exact
    window curve; everything is enumerated.
    """
    curve = markov_window_curve(prior)
    T = prior.length
    u = UtilityFunction(lambda d, r: float(np.sum(np.asarray(d) == r)), 1.0, (0, 1))
    _, receipt = pufferfish_exponential_topk(np.zeros(T), u, k, curve, eps_p, np.random.default_rng(0), T)
    eps_round = receipt.eps_dp / k
    ep = enumerate_markov_prior(prior)
    orders = list(itertools.permutations((0, 1), k))
    mass = {0: np.zeros(len(orders) ** runs), 1: np.zeros(len(orders) ** runs)}
    for d, pd in zip(ep.datasets, ep.probs):
        scores = [float(sum(x == r for x in d)) for r in (0, 1)]
        single = np.array([exact_topk_order_prob(scores, o, eps_round, 1.0) for o in orders])
        joint = single
        for _ in range(runs - 1):
            joint = np.outer(joint, single).ravel()
        mass[d[c]] += pd * joint
    return float(np.max(np.abs(np.log(mass[0] / ep.probs[[d[c] == 0 for d in ep.datasets]].sum())
                                 - np.log(mass[1] / ep.probs[[d[c] == 1 for d in ep.datasets]].sum())))), receipt


class TestEndToEnd:
    @pytest.mark.parametrize("eps_p", [0.5, 1.0, 2.0])
    @pytest.mark.parametrize("p,q", [(0.8, 0.7), (0.9, 0.6)])
    def test_single_run_bound(self, p, q, eps_p):
        prior = MarkovChainPrior(TransitionMatrix.binary(p, q), 8)
        worst, _ = exact_output_odds(prior, 3, eps_p, 1)
        assert worst <= eps_p + 1e-9
