import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rankinfer.alloc import PositionWeights, cumulative_weights, is_feasible, uniform_stair
from rankinfer.optimize import (
    InfeasibleWeightsError,
    MultiUnitRevenueCurve,
    RankOperation,
    apply_iron,
    apply_operation,
    apply_reserve,
    concave_hull,
    decompose_to_weights_sampler,
    decomposition_plan,
    operations_to_json,
    sample_decompositions,
    optimal_rank_based,
    optimal_strict,
    revenue_of_weights,
    strict_four_step,
    upper_envelope_bruteforce,
)


def random_curve(rng, n):
    P = np.zeros(n + 1)
    P[1:n] = rng.random(n - 1)
    return P


def random_weights(rng, n):
    w = np.sort(rng.random(n))[::-1]
    if rng.random() < 0.3:
        w[0] = 1.0
    return PositionWeights(w)


def random_feasible(rng, env):
    """Monotone vector scaled down until its prefix sums sit under env's."""
    w = np.sort(rng.random(env.n))[::-1] * rng.choice([1.0, rng.random()])
    W = np.cumsum(w)
    E = cumulative_weights(env)[1:]
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(W > 0, E / W, np.inf).min()
    return PositionWeights(w * min(1.0, scale))


def grid_best(env, P, floor=None, step=0.05):
    """Brute force over monotone weight vectors on a grid."""
    n = env.n
    vals = np.round(np.arange(0, 1 + 1e-9, step), 10)
    best = -np.inf
    for w in itertools.combinations_with_replacement(vals[::-1], n):
        w = np.array(w)
        if floor is not None:
            d = w - np.append(w[1:], 0.0)
            if np.any(d < floor - 1e-12):
                continue
        if is_feasible(PositionWeights(w), env, tol=1e-9):
            best = max(best, revenue_of_weights(w, P))
    return best


class TestCurve:
    def test_validation(self):
        with pytest.raises(ValueError):
            MultiUnitRevenueCurve([0.1, 0.2, 0.0])
        with pytest.raises(ValueError):
            MultiUnitRevenueCurve([0.0, -0.2, 0.0])
        assert MultiUnitRevenueCurve([0, 0.1, 0.3, 0]).n == 3


class TestHull:
    def test_concave_curve_not_ironed(self):
        h = concave_hull([0, 0.3, 0.4, 0.3, 0])
        assert h.intervals == ()
        assert np.allclose(h.Pbar, [0, 0.3, 0.4, 0.3, 0])

    def test_example(self):
        h = concave_hull([0, 0.1, 0.4, 0])
        assert h.intervals == ((0, 2),)
        assert np.allclose(h.Pbar, [0, 0.2, 0.4, 0])
        assert np.allclose(h.marginal, [0.2, 0.2, -0.4])

    def test_collinear_not_ironed(self):
        h = concave_hull([0, 0.1, 0.2, 0.3, 0])
        assert h.intervals == ()

    @pytest.mark.parametrize("seed", range(10))
    def test_against_bruteforce(self, seed):
        rng = np.random.default_rng(seed)
        for n in range(1, 13):
            P = random_curve(rng, n)
            h = concave_hull(P)
            assert np.allclose(h.Pbar, upper_envelope_bruteforce(P), atol=1e-12, rtol=0)
            assert np.all(h.Pbar >= P)
            assert np.all(np.diff(h.Pbar, 2) <= 1e-12)
            for a, b in h.intervals:
                assert h.Pbar[a] == P[a] and h.Pbar[b] == P[b]
                assert np.all(h.Pbar[a + 1 : b] > P[a + 1 : b])


class TestRankOperations:
    def test_iron_examples(self):
        w = PositionWeights([1, 0.6, 0.2, 0.0])
        assert apply_iron(w, 2, 2) == w
        assert np.allclose(apply_iron(w, 1, 4).w, 0.45)
        assert np.allclose(apply_iron(w, 2, 3).w, [1, 0.4, 0.4, 0])

    def test_reserve(self):
        w = PositionWeights([1, 0.6, 0.2, 0.1])
        assert apply_reserve(w, 2).tolist() == [1, 0.6, 0, 0]
        with pytest.raises(ValueError):
            apply_reserve(w, 5)
        with pytest.raises(ValueError):
            apply_iron(w, 3, 2)

    @settings(max_examples=100)
    @given(st.integers(0, 2**32 - 1))
    def test_operations_feasible(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        w = random_weights(rng, n)
        lo = int(rng.integers(1, n + 1))
        hi = int(rng.integers(lo, n + 1))
        assert is_feasible(apply_iron(w, lo, hi), w)
        assert is_feasible(apply_reserve(w, int(rng.integers(0, n + 1))), w)

    def test_matrix_matches_apply(self):
        w = PositionWeights([1, 0.7, 0.3, 0.2, 0.0])
        for op in (RankOperation.iron(2, 4), RankOperation.reserve(3)):
            assert np.allclose(op.matrix(5) @ w.w, apply_operation(w, op).w)

    def test_validation(self):
        with pytest.raises(ValueError):
            RankOperation.iron(0, 2)
        with pytest.raises(ValueError):
            RankOperation("swap")

    def test_json(self):
        log = [(RankOperation.iron(2, 3), 0.25), (RankOperation.reserve(1), 1.0)]
        assert json.loads(operations_to_json(log)) == [
            [{"op": "iron", "lo": 2, "hi": 3}, 0.25],
            [{"op": "reserve", "k": 1}, 1.0],
        ]


class TestOptimalRankBased:
    def test_concave_keeps_env(self):
        env = PositionWeights([1, 0.7, 0.2, 0.0])
        assert optimal_rank_based(env, [0, 0.2, 0.3, 0.35, 0]).allclose(env)

    def test_example(self):
        env = PositionWeights([1, 0.5, 0])
        P = [0, 0.1, 0.4, 0]
        w = optimal_rank_based(env, P)
        assert w.allclose(PositionWeights([0.75, 0.75, 0.0]))
        assert revenue_of_weights(w, P) == pytest.approx(grid_best(env, P, step=0.05), abs=1e-12)

    def test_mismatched_n(self):
        with pytest.raises(ValueError):
            optimal_rank_based(PositionWeights([1, 0]), [0, 0.1, 0.2, 0])

    @pytest.mark.parametrize("seed", range(5))
    def test_beats_random_feasible(self, seed):
        rng = np.random.default_rng(100 + seed)
        for _ in range(10):
            n = int(rng.integers(2, 9))
            env, P = random_weights(rng, n), random_curve(rng, n)
            w = optimal_rank_based(env, P)
            assert is_feasible(w, env)
            best = revenue_of_weights(w, P)
            for _ in range(1000):
                other = random_feasible(rng, env)
                assert revenue_of_weights(other, P) <= best + 1e-9

    @pytest.mark.parametrize("seed", range(3))
    def test_matches_grid_search(self, seed):
        rng = np.random.default_rng(seed)
        for n in (2, 3, 4):
            env = PositionWeights(np.round(np.sort(rng.random(n))[::-1] * 10) / 10)
            P = random_curve(rng, n)
            w = optimal_rank_based(env, P)
            assert revenue_of_weights(w, P) >= grid_best(env, P, step=0.1) - 1e-12


class TestStrict:
    P4 = [0, 0.1, 0.05, 0.3, 0]  # non-concave

    def test_concave_stair_returns_env(self):
        env = PositionWeights([1, 0.8, 0.4, 0.0])  # weight on rank n only costs revenue
        epsw = PositionWeights(0.1 * uniform_stair(4).w)
        P = [0, 0.2, 0.3, 0.35, 0]
        assert optimal_strict(env, epsw, P).allclose(env, atol=1e-9)
        assert np.allclose(strict_four_step(env, epsw, P), env.w)

    def test_zero_floor_matches_rank_based(self):
        rng = np.random.default_rng(7)
        for _ in range(30):
            n = int(rng.integers(2, 8))
            env, P = random_weights(rng, n), random_curve(rng, n)
            w = optimal_strict(env, PositionWeights(np.zeros(n)), P)
            assert revenue_of_weights(w, P) == pytest.approx(
                revenue_of_weights(optimal_rank_based(env, P), P), abs=1e-9
            )

    def test_example_against_grid(self):
        env = PositionWeights([1, 1, 1, 0])
        epsw = PositionWeights(0.1 * uniform_stair(4).w)
        floor = epsw.w - np.append(epsw.w[1:], 0.0)
        w = optimal_strict(env, epsw, self.P4)
        assert is_feasible(w, env)
        d = w.w - np.append(w.w[1:], 0.0)
        assert np.all(d >= floor - 1e-9)
        grid = grid_best(env, self.P4, floor=floor, step=1 / 30)
        assert revenue_of_weights(w, self.P4) >= grid - 1e-12
        assert revenue_of_weights(w, self.P4) - grid <= 0.02

    def test_four_step_infeasible_on_example(self):
        # env - epsw is not monotone here, so monotone-ironing pushes mass upward
        env = PositionWeights([1, 1, 1, 0])
        epsw = PositionWeights(0.1 * uniform_stair(4).w)
        out = strict_four_step(env, epsw, self.P4)
        assert out[0] > 1.0

    def test_infeasible_floor(self):
        with pytest.raises(InfeasibleWeightsError):
            optimal_strict(PositionWeights([0.5, 0.0]), PositionWeights([1.0, 0.0]), [0, 0.1, 0])

    @pytest.mark.parametrize("seed", range(4))
    def test_floor_and_feasibility(self, seed):
        rng = np.random.default_rng(seed)
        for _ in range(20):
            n = int(rng.integers(2, 9))
            env, P = random_weights(rng, n), random_curve(rng, n)
            epsw = PositionWeights(rng.uniform(0, 0.3) * env.w)
            w = optimal_strict(env, epsw, P)
            floor = epsw.w - np.append(epsw.w[1:], 0.0)
            d = w.w - np.append(w.w[1:], 0.0)
            assert is_feasible(w, env, tol=1e-9)
            assert np.all(d >= floor - 1e-9)

    @pytest.mark.parametrize("seed", range(4))
    def test_four_step_optimal_when_monotone(self, seed):
        # env - epsw monotone: the construction is feasible and matches the LP
        rng = np.random.default_rng(seed)
        for _ in range(20):
            n = int(rng.integers(2, 8))
            env, P = random_weights(rng, n), random_curve(rng, n)
            env = apply_reserve(env, n - 1)
            if np.any(np.diff(concave_hull(P).Pbar)[:-1] < 0):
                continue  # a reserve above rank n would be optimal
            epsw = PositionWeights(rng.uniform(0, 0.5) * env.w)
            four = strict_four_step(env, epsw, P)
            assert is_feasible(PositionWeights(np.clip(four, 0, 1)), env, tol=1e-9)
            lp = optimal_strict(env, epsw, P)
            assert revenue_of_weights(four, P) == pytest.approx(revenue_of_weights(lp, P), abs=1e-9)


def random_target(rng, env):
    w = env
    for _ in range(int(rng.integers(1, 4))):
        lo = int(rng.integers(1, env.n + 1))
        hi = int(rng.integers(lo, env.n + 1))
        w = apply_iron(w, lo, hi)
    lam = rng.random()
    mixed = lam * w.w + (1 - lam) * apply_reserve(env, int(rng.integers(0, env.n + 1))).w
    return PositionWeights(mixed * rng.uniform(0.5, 1.0))


class TestDecomposition:
    def test_target_equals_env(self):
        env = PositionWeights([1, 0.6, 0.2])
        w, log = decompose_to_weights_sampler(env, env, np.random.default_rng(0))
        assert log == [] and w == env

    def test_single_iron(self):
        env, target = PositionWeights([1, 1, 0]), PositionWeights([1, 0.5, 0.5])
        plan = decomposition_plan(env, target)
        w, log = decompose_to_weights_sampler(env, target, np.random.default_rng(0))
        assert log == [(RankOperation.iron(2, 3), 1.0)]
        assert w.allclose(target)
        assert len(plan) == 1

    def test_optimal_example(self):
        env = PositionWeights([1, 0.5, 0])
        target = optimal_rank_based(env, [0, 0.1, 0.4, 0])
        rng = np.random.default_rng(1)
        for _ in range(20):
            w, _ = decompose_to_weights_sampler(env, target, rng)
            assert w.allclose(target)

    def test_infeasible_target(self):
        with pytest.raises(InfeasibleWeightsError):
            decomposition_plan(PositionWeights([1, 0, 0]), PositionWeights([1, 1, 0]))

    @pytest.mark.parametrize("seed", range(6))
    def test_mean_matches_target(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        env = random_weights(rng, n)
        target = random_target(rng, env)
        reps = 20_000
        plan = decomposition_plan(env, target)
        draws = np.array([decompose_to_weights_sampler(env, target, rng, plan)[0].w for _ in range(reps)])
        se = draws.std(axis=0) / np.sqrt(reps)
        assert np.all(np.abs(draws.mean(axis=0) - target.w) <= 3 * se + 1e-12)

    @settings(max_examples=60, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_realizations_feasible(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 9))
        env = random_weights(rng, n)
        target = random_target(rng, env)
        assert len(decomposition_plan(env, target)) <= n
        w, log = decompose_to_weights_sampler(env, target, rng)
        assert is_feasible(w, env)
        cur = env
        for op, prob in log:
            assert 0 < prob <= 1
            cur = apply_operation(cur, op)
            assert is_feasible(cur, env)
        assert cur == w

    @pytest.mark.parametrize("seed", range(3))
    def test_batch_sampler_same_support(self, seed):
        rng = np.random.default_rng(seed)
        env = random_weights(rng, 5)
        target = random_target(rng, env)
        batch = sample_decompositions(env, target, 4000, rng)
        singles = {tuple(np.round(decompose_to_weights_sampler(env, target, rng)[0].w, 9)) for _ in range(300)}
        assert singles <= {tuple(r) for r in np.round(batch, 9)}
        se = batch.std(axis=0) / np.sqrt(batch.shape[0])
        assert np.all(np.abs(batch.mean(axis=0) - target.w) <= 4 * se + 1e-12)

    def test_batch_sampler_unbiased_high_precision(self):
        rng = np.random.default_rng(19)
        for _ in range(5):
            n = int(rng.integers(4, 9))
            env = random_weights(rng, n)
            target = random_target(rng, env)
            draws = sample_decompositions(env, target, 1_000_000, rng)
            se = draws.std(axis=0) / 1000.0
            assert np.all(np.abs(draws.mean(axis=0) - target.w) <= 4 * se + 1e-12)
