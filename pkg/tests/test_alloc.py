import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from rankinfer.alloc import (
    AllocationRule,
    PositionWeights,
    cumulative_weights,
    is_feasible,
    marginal_weights,
    max_slope_bound,
    mix,
    multiunit_alloc,
    multiunit_alloc_deriv,
    multiunit_weights,
    position_alloc,
    uniform_stair,
    universal_b,
    weights_from_marginal,
)


def binomial_alloc(k, n, q):
    """Win probability: at most k-1 of the n-1 others have a higher quantile."""
    return sum(math.comb(n - 1, i) * (1 - q) ** i * q ** (n - 1 - i) for i in range(k))


@st.composite
def weight_vectors(draw, n=None):
    n = draw(st.integers(2, 10)) if n is None else n
    raw = draw(st.lists(st.floats(0, 1), min_size=n, max_size=n))
    return PositionWeights(sorted(raw, reverse=True))


class TestMultiunit:
    def test_one_unit_is_power(self):
        assert multiunit_alloc(1, 3, 0.5) == pytest.approx(0.25, abs=1e-15)

    def test_n_unit_always_serves(self):
        assert np.all(multiunit_alloc(5, 5, np.linspace(0, 1, 11)) == 1.0)
        assert np.all(multiunit_alloc(0, 5, np.linspace(0, 1, 11)) == 0.0)

    def test_two_of_four_at_median(self):
        assert multiunit_alloc(2, 4, 0.5) == pytest.approx(0.5, abs=1e-15)

    @pytest.mark.parametrize("n", [2, 3, 7, 16])
    def test_matches_binomial_sum(self, n):
        q = np.linspace(0, 1, 37)
        for k in range(n + 1):
            expected = [binomial_alloc(k, n, float(t)) for t in q]
            assert np.allclose(multiunit_alloc(k, n, q), expected, atol=1e-12)

    def test_slope_examples(self):
        assert multiunit_alloc_deriv(1, 5, 1.0) == pytest.approx(4.0)
        assert multiunit_alloc_deriv(4, 5, 0.0) == pytest.approx(4.0)
        assert multiunit_alloc_deriv(2, 4, 0.5) == pytest.approx(1.5)
        assert multiunit_alloc_deriv(1, 5, 0.0) == 0.0

    @pytest.mark.parametrize("n", [2, 3, 6, 12])
    def test_slope_matches_finite_difference(self, n):
        h = 1e-6
        q = np.linspace(h, 1 - h, 201)
        for k in range(n + 1):
            fd = (multiunit_alloc(k, n, q + h) - multiunit_alloc(k, n, q - h)) / (2 * h)
            d = multiunit_alloc_deriv(k, n, q)
            assert np.all(np.abs(d - fd) <= 1e-5 * (1 + np.abs(d)))

    def test_endpoints_and_monotone(self):
        q = np.linspace(0, 1, 10_001)
        for n in (2, 5, 9):
            for k in range(n + 1):
                x = multiunit_alloc(k, n, q)
                assert x[0] == (1.0 if k == n else 0.0)
                assert x[-1] == (1.0 if k >= 1 else 0.0)
                assert np.all(np.diff(x) >= -1e-15)

    def test_large_n_no_overflow(self):
        q = np.array([1e-8, 0.3, 0.5, 1 - 1e-8])
        d = multiunit_alloc_deriv(64, 128, q)
        assert np.all(np.isfinite(d)) and np.all(d >= 0)
        assert d[2] == pytest.approx(127 * math.comb(126, 63) * 0.5**126, rel=1e-10)

    @pytest.mark.parametrize("k, n, q", [(-1, 3, 0.5), (4, 3, 0.5), (1, 3, 1.5), (1, 3, -0.1)])
    def test_domain_errors(self, k, n, q):
        with pytest.raises(ValueError):
            multiunit_alloc(k, n, q)


class TestWeights:
    def test_validation(self):
        with pytest.raises(ValueError):
            PositionWeights([0.5, 1.0])
        with pytest.raises(ValueError):
            PositionWeights([1.2, 0.0])
        with pytest.raises(ValueError):
            PositionWeights([1.0, -0.1])

    def test_marginals(self):
        assert np.allclose(marginal_weights([1, 1, 0]), [0, 0, 1, 0])
        assert np.allclose(marginal_weights([1, 0.5, 0]), [0, 0.5, 0.5, 0])

    def test_cumulative_of_stair(self):
        assert np.allclose(cumulative_weights(uniform_stair(4)), [0, 1, 5 / 3, 2, 2])

    @given(weight_vectors())
    def test_marginal_round_trip(self, w):
        wbar = marginal_weights(w)
        assert wbar.sum() == pytest.approx(1.0)
        assert weights_from_marginal(wbar).allclose(w, atol=1e-12)

    def test_constructors(self):
        assert uniform_stair(3).tolist() == [1.0, 0.5, 0.0]
        assert uniform_stair(2).tolist() == [1.0, 0.0]
        assert universal_b(4).tolist() == [1.0, 0.5, 0.5, 0.0]
        assert multiunit_weights(2, 4).tolist() == [1.0, 1.0, 0.0, 0.0]


class TestFeasibility:
    def test_examples(self):
        a, b = PositionWeights([1, 0, 0]), PositionWeights([1, 1, 0])
        assert is_feasible(a, a)
        assert is_feasible(a, b)
        assert not is_feasible(b, a)

    def test_mismatched_n(self):
        with pytest.raises(ValueError):
            is_feasible(PositionWeights([1, 0]), PositionWeights([1, 0, 0]))

    @given(weight_vectors(n=6), st.integers(1, 6), st.integers(1, 6))
    def test_ironing_is_feasible(self, w, i, j):
        lo, hi = min(i, j), max(i, j)
        out = w.w.copy()
        out[lo - 1 : hi] = out[lo - 1 : hi].mean()
        assert is_feasible(PositionWeights(out), w)

    @given(weight_vectors(n=5), weight_vectors(n=5), weight_vectors(n=5))
    def test_reflexive_and_transitive(self, a, b, c):
        assert is_feasible(a, a)
        if is_feasible(a, b) and is_feasible(b, c):
            assert is_feasible(a, c, tol=1e-11)


class TestRules:
    def test_stair_is_identity(self):
        q = np.linspace(0, 1, 101)
        for n in (2, 3, 8, 20):
            rule = uniform_stair(n).rule()
            assert np.allclose(rule(q), q, atol=1e-12)
            assert np.allclose(rule.deriv(q), 1.0, atol=1e-12)

    def test_pure_rule_equals_multiunit(self):
        q = np.linspace(0, 1, 51)
        assert np.allclose(AllocationRule.multiunit(2, 5)(q), multiunit_alloc(2, 5, q))

    def test_hand_mixture(self):
        # x_1(.5) = .25 and x_2(.5) = 1 - .5**2 = .75 for three agents
        rule = mix(AllocationRule.multiunit(1, 3), AllocationRule.multiunit(2, 3), 0.5)
        expected = 0.5 * binomial_alloc(1, 3, 0.5) + 0.5 * binomial_alloc(2, 3, 0.5)
        assert expected == pytest.approx(0.5)
        assert rule(0.5) == pytest.approx(expected, abs=1e-15)

    def test_mix_identities(self):
        a, b = AllocationRule.multiunit(1, 4), uniform_stair(4).rule()
        assert mix(a, b, 0.0) is a
        assert mix(a, a, 0.3) == a
        c = mix(a, b, 0.001)
        assert c(0.5) == pytest.approx(0.999 * 0.125 + 0.001 * 0.5, abs=1e-15)

    def test_mix_errors(self):
        with pytest.raises(ValueError):
            mix(AllocationRule.multiunit(1, 3), AllocationRule.multiunit(1, 4), 0.5)
        with pytest.raises(ValueError):
            mix(AllocationRule.multiunit(1, 3), AllocationRule.multiunit(2, 3), 1.5)

    @given(weight_vectors())
    def test_two_evaluations_agree(self, w):
        rule = w.rule()
        q = np.linspace(0, 1, 23)
        direct = sum(rule.marginal[k] * multiunit_alloc(k, w.n, q) for k in range(w.n + 1))
        assert np.allclose(position_alloc(rule, q), direct, atol=1e-12)
        assert rule(1.0) == pytest.approx(w.w[0], abs=1e-12)
        assert rule(0.0) == pytest.approx(w.w[-1], abs=1e-12)

    def test_log_deriv_matches(self):
        rule = PositionWeights([1, 0.7, 0.2, 0.2, 0.0]).rule()
        q = np.linspace(0.01, 0.99, 50)
        assert np.allclose(np.exp(rule.log_deriv(q)), rule.deriv(q), rtol=1e-12)

    def test_constant_rule(self):
        assert PositionWeights([1, 1, 1]).rule().is_constant
        assert not uniform_stair(3).rule().is_constant


class TestMaxSlope:
    def test_extreme_units_exact(self):
        assert max_slope_bound(1, 10) == (9.0, 9.0)
        assert max_slope_bound(9, 10) == (9.0, 9.0)
        q = np.linspace(0, 1, 10_001)
        assert multiunit_alloc_deriv(1, 10, q).max() == pytest.approx(9.0)

    def test_middle_unit_in_bracket(self):
        q = np.linspace(0, 1, 10_001)
        lo, hi = max_slope_bound(5, 10)
        assert lo <= multiunit_alloc_deriv(5, 10, q).max() <= hi

    def test_any_rule_slope_at_most_n(self):
        q = np.linspace(0, 1, 10_001)
        for n in (2, 5, 17, 64):
            for k in range(1, n):
                assert multiunit_alloc_deriv(k, n, q).max() <= n

    def test_theta_scaling(self):
        # sup x_k' * sqrt(min(k-1, n-k)) / (n-1) stays in a fixed band
        q = np.linspace(0, 1, 20_001)
        for n in (8, 32, 128):
            for k in range(2, n - 1):
                s = multiunit_alloc_deriv(k, n, q).max()
                ratio = s * math.sqrt(min(k - 1, n - k)) / (n - 1)
                assert 0.36 <= ratio <= 0.63

    def test_upper_constant_is_asymptotic(self):
        q = np.linspace(0, 1, 200_001)
        s = multiunit_alloc_deriv(256, 512, q).max()
        assert s <= 1.01 * max_slope_bound(256, 512)[1]

    @pytest.mark.xfail(reason="bracket constants are only asymptotic; violated at finite n", strict=True)
    def test_bracket_contains_grid_sup(self):
        q = np.linspace(0, 1, 10_001)
        for n in range(4, 65):
            for k in range(2, n - 1):
                lo, hi = max_slope_bound(k, n)
                assert lo <= multiunit_alloc_deriv(k, n, q).max() <= hi

    def test_lower_bound_when_min_is_large(self):
        q = np.linspace(0, 1, 20_001)
        for n in (32, 64):
            for k in range(6, n - 5):
                assert multiunit_alloc_deriv(k, n, q).max() >= max_slope_bound(k, n)[0]
