import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate
from scipy.stats import norm

from pufferfish.errors import ValidationError
from pufferfish.influence import (
    AbCurve,
    Partition,
    best_epsilon_dp,
    brute_force_ab_oracle,
    gaussian_ab_curve,
    low_set_for,
    markov_ab_curve,
    markov_ab_point,
    markov_window_curve,
    mqm_epsilon,
)
from pufferfish.priors import (
    ExplicitPrior,
    GaussianPrior,
    MarkovChainPrior,
    SecretPair,
    TransitionMatrix,
    enumerate_markov_prior,
)


def oracle(p, q, b, length, exhaustive=False):
    prior = enumerate_markov_prior(MarkovChainPrior(TransitionMatrix.binary(p, q), length))
    c = (length + 1) // 2 - 1
    return brute_force_ab_oracle(prior, SecretPair.entry_values(c, 0, 1), b, [c], exhaustive=exhaustive)


class TestCurveType:
    def test_rejects_increasing(self):
        with pytest.raises(ValidationError):
            AbCurve(((1, 0.5), (2, 0.7)))

    def test_rejects_unsorted_b(self):
        with pytest.raises(ValidationError):
            AbCurve(((2, 0.5), (1, 0.4)))

    def test_rejects_unknown_provenance(self):
        with pytest.raises(ValidationError):
            AbCurve(((1, 0.5),), "guess")

    def test_json_round_trip_with_infinity(self):
        c = AbCurve(((0, math.inf), (3, 1.25)), "oracle")
        doc = c.to_json()
        assert doc["points"][0]["a"] == "inf"
        assert AbCurve.from_json(doc) == c

    def test_partition_complement(self):
        part = Partition.from_high([1, 2], 5)
        assert part.low == frozenset({0, 3, 4})
        with pytest.raises(ValidationError):
            Partition(frozenset({1}), frozenset({1, 2}))


class TestClosedForm:
    def test_symmetric_chain_b1(self):
        # lambda = 0.5, pi = 0.5, d = 1 on both sides: 2 log(0.75 / 0.25)
        assert markov_ab_point(0.75, 0.75, 1) == pytest.approx(2 * math.log(3), abs=1e-12)

    def test_symmetric_chain_b3(self):
        # d = 2 on both sides: 2 log(0.625 / 0.375)
        assert markov_ab_point(0.75, 0.75, 3) == pytest.approx(2 * math.log(5 / 3), abs=1e-12)

    def test_zero_correlation(self):
        for b in range(1, 12):
            assert markov_ab_point(0.5, 0.5, b) == 0.0

    def test_decreasing_in_b(self):
        vals = [markov_ab_point(0.9, 0.8, b) for b in range(1, 30)]
        assert all(x >= y for x, y in zip(vals, vals[1:]))
        assert vals[-1] < 0.05

    def test_validation(self):
        with pytest.raises(ValidationError):
            markov_ab_point(1.0, 0.5, 1)
        with pytest.raises(ValidationError):
            markov_ab_point(0.5, 0.5, 0)
        with pytest.raises(ValidationError):
            markov_ab_point(0.6, 0.6, 4, length=5)

    def test_curve_provenance_and_monotone(self):
        c = markov_ab_curve(0.3, 0.2, 8)
        assert c.provenance == "closed-form"
        assert c.bs == list(range(1, 9))
        assert all(x >= y for x, y in zip(c.values, c.values[1:]))

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.02, 0.98), st.floats(0.02, 0.98), st.integers(1, 5))
    def test_closed_form_bounds_oracle(self, p, q, b):
        assert markov_ab_point(p, q, b) >= oracle(p, q, b, b + 4) - 1e-9

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.02, 0.98), st.integers(1, 5))
    def test_equal_persistence_matches_oracle(self, p, b):
        assert markov_ab_point(p, p, b) == pytest.approx(oracle(p, p, b, 2 * b + 3), abs=1e-9)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(0.02, 0.98), st.floats(0.02, 0.98), st.integers(1, 5))
    def test_positive_correlation_matches_oracle(self, p, q, b):
        if p + q < 1:
            p, q = 1 - p, 1 - q
        assert markov_ab_point(p, q, b) == pytest.approx(oracle(p, q, b, 2 * b + 3), abs=1e-9)


class TestOracle:
    def test_independent_entries_leak_nothing(self):
        ds = [(i, j, k) for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        prior = ExplicitPrior.uniform(ds)
        assert brute_force_ab_oracle(prior, SecretPair.entry_values(1, 0, 1), 1, [1]) == 0.0

    def test_secret_entry_in_low_set_is_unbounded(self):
        prior = ExplicitPrior.uniform([(0, 1), (1, 0)])
        assert brute_force_ab_oracle(prior, SecretPair.entry_values(0, 0, 1), 0, [0]) == math.inf

    def test_copied_entry(self):
        prior = ExplicitPrior.uniform([(0, 0), (1, 1)])
        assert brute_force_ab_oracle(prior, SecretPair.entry_values(0, 0, 1), 1, [0]) == math.inf
        assert brute_force_ab_oracle(prior, SecretPair.entry_values(0, 0, 1), 2, [0]) == 0.0

    def test_randomized_copy(self):
        # x1 = x0 with probability 0.8
        ds = [(0, 0), (0, 1), (1, 0), (1, 1)]
        prior = ExplicitPrior(tuple(ds), np.array([0.4, 0.1, 0.1, 0.4]))
        val = brute_force_ab_oracle(prior, SecretPair.entry_values(0, 0, 1), 1, [0])
        assert val == pytest.approx(math.log(4), abs=1e-12)

    def test_window_equals_exhaustive_on_chains(self):
        for p, q in [(0.8, 0.7), (0.3, 0.9), (0.2, 0.1)]:
            for b in (1, 2, 3):
                assert oracle(p, q, b, 6) == pytest.approx(oracle(p, q, b, 6, exhaustive=True), abs=1e-12)

    def test_support_cap(self):
        prior = ExplicitPrior.uniform([(0,), (1,)])
        with pytest.raises(ValidationError):
            brute_force_ab_oracle(prior, SecretPair.entry_values(0, 0, 1), 0, [0], max_support=1)

    def test_overlapping_secrets(self):
        prior = ExplicitPrior.uniform([(0,), (1,)])
        with pytest.raises(ValidationError):
            brute_force_ab_oracle(prior, SecretPair(lambda d: True, lambda d: d[0] == 1, "x"), 0, [0])


class TestWindowCurve:
    def test_length5_values(self):
        c = markov_window_curve(MarkovChainPrior(TransitionMatrix.binary(0.75, 0.75), 5))
        assert c.provenance == "oracle"
        assert c.values[0] == pytest.approx(2 * math.log(3), abs=1e-12)
        assert c.values[-1] == 0.0

    @pytest.mark.parametrize("p,q", [(0.9, 0.8), (0.3, 0.6), (0.15, 0.25), (0.5, 0.5)])
    def test_matches_brute_force_worst_position(self, p, q):
        T = 7
        prior = MarkovChainPrior(TransitionMatrix.binary(p, q), T)
        curve = markov_window_curve(prior)
        ep = enumerate_markov_prior(prior)
        raw = []
        for b in range(1, T + 1):
            raw.append(max(
                brute_force_ab_oracle(ep, SecretPair.entry_values(c, 0, 1), b, [c]) for c in range(T)
            ))
        running = np.minimum.accumulate(raw)
        np.testing.assert_allclose(curve.values, running, atol=1e-10)

    def test_three_state_chain_against_brute_force(self):
        P = TransitionMatrix(np.array([[0.6, 0.3, 0.1], [0.2, 0.5, 0.3], [0.25, 0.25, 0.5]]))
        T = 5
        prior = MarkovChainPrior(P, T)
        curve = markov_window_curve(prior)
        ep = enumerate_markov_prior(prior)
        raw = []
        for b in range(1, T + 1):
            raw.append(max(
                brute_force_ab_oracle(ep, SecretPair.entry_values(c, s, t), b, [c])
                for c in range(T) for s in range(3) for t in range(3) if s < t
            ))
        np.testing.assert_allclose(curve.values, np.minimum.accumulate(raw), atol=1e-10)

    def test_requires_stationary_start(self):
        prior = MarkovChainPrior(TransitionMatrix.binary(0.9, 0.8), 5, initial=np.array([1.0, 0.0]))
        with pytest.raises(ValidationError):
            markov_window_curve(prior)


def quad_gaussian_leakage(n, ell, gamma, delta, b, xl_grid=41):
    """Direct quadrature for a single low entry: max log Pr(x_L | s_j) / Pr(x_L | s_j')."""
    center = (n + 1) // 2 - 1
    low = low_set_for(n, b, center)
    assert len(low) == 1
    rho = math.exp(-((center - low[0]) ** 2) / ell)
    sd = math.sqrt(1 - rho**2)
    step = delta / 2
    rs = np.arange(-gamma, gamma - delta + 1e-12, step)
    gap = int(math.ceil(delta / step - 1e-9))
    best = 0.0
    for xl in np.linspace(-gamma, gamma, xl_grid):
        dens = []
        for r in rs:
            num, _ = integrate.quad(lambda x: norm.pdf(x) * norm.pdf(xl, rho * x, sd), r, r + delta)
            den = norm.cdf(r + delta) - norm.cdf(r)
            dens.append(math.log(num / den))
        dens = np.array(dens)
        for j in range(len(rs)):
            for k in range(len(rs)):
                if abs(j - k) >= gap:
                    best = max(best, dens[j] - dens[k])
    return best


class TestGaussianCurve:
    def test_low_set_ties_to_lower_index(self):
        assert low_set_for(3, 2, 1) == [0]
        assert low_set_for(5, 2, 2) == [0, 1, 4]

    def test_against_quadrature(self):
        expected = quad_gaussian_leakage(3, 1.0, 1.0, 0.1, 2)
        got = gaussian_ab_curve(GaussianPrior(3, 1.0, 1.0), 0.1, mu_grid_points=41).points[1][1]
        assert got == pytest.approx(expected, rel=0.02)

    def test_delta_validation(self):
        with pytest.raises(ValidationError):
            gaussian_ab_curve(GaussianPrior(5, 1.0, 5.0), 0.6)

    def test_monotone_and_sweep_provenance(self):
        c = gaussian_ab_curve(GaussianPrior(9, 2.0, 5.0), 0.1)
        assert c.provenance == "sweep"
        assert c.bs == list(range(1, 9))
        assert all(x >= y for x, y in zip(c.values, c.values[1:]))

    def test_longer_lengthscale_leaks_more(self):
        short = gaussian_ab_curve(GaussianPrior(11, 0.5, 5.0), 0.1)
        long = gaussian_ab_curve(GaussianPrior(11, 5.0, 5.0), 0.1)
        assert all(x >= y for x, y in zip(long.values, short.values))


class TestBudgets:
    def test_best_point(self):
        curve = AbCurve(((1, 0.5), (4, 0.1)))
        eps, point = best_epsilon_dp(curve, 1.0, 100)
        assert point == (1, 0.5)
        assert eps == pytest.approx(0.5)

    def test_larger_b_wins_when_cheaper(self):
        curve = AbCurve(((1, 2.0), (4, 0.1)))
        eps, point = best_epsilon_dp(curve, 1.0, 100)
        assert point == (4, 0.1)
        assert eps == pytest.approx(0.225)

    def test_fallback_to_group_privacy(self):
        eps, point = best_epsilon_dp(AbCurve(((1, 3.0),)), 1.0, 50)
        assert point is None
        assert eps == pytest.approx(0.02)

    def test_b_zero_skipped(self):
        eps, point = best_epsilon_dp(AbCurve(((0, 0.0), (2, 0.0))), 1.0, 10)
        assert point == (2, 0.0)
        assert eps == 0.5

    def test_strict_inequality(self):
        _, point = best_epsilon_dp(AbCurve(((1, 1.0),)), 1.0, 10)
        assert point is None

    @settings(max_examples=100, deadline=None)
    @given(st.floats(0.05, 10.0), st.integers(1, 300))
    def test_translation_never_exceeds_budget(self, eps_p, count):
        curve = markov_ab_curve(0.9, 0.85, 40)
        eps, point = best_epsilon_dp(curve, eps_p, count)
        if point is None:
            assert eps * count == pytest.approx(eps_p)
        else:
            b, a = point
            assert b * eps + a <= eps_p * (1 + 1e-12)

    def test_mqm(self):
        assert mqm_epsilon(1.0, 0.2, 4) == pytest.approx(0.2)
        with pytest.raises(ValidationError):
            mqm_epsilon(1.0, 1.0, 4)
