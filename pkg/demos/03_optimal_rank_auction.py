"""Designing a revenue-optimal rank-based auction.

Revenue of any rank-based auction is a linear function of its position
weights, with coefficients given by the multi-unit revenues P_k.  When the
points (k, P_k) are not concave, the optimal auction irons positions by
rank over the dips and refuses to serve ranks with negative ironed
marginal revenue.

A bimodal value distribution (60% of agents valued in [0.3, 0.4], the rest
in [0.9, 1]) makes the multi-unit revenue curve non-concave.
"""
# %%
import numpy as np

from rankinfer import (
    PositionWeights,
    TabulatedDistribution,
    concave_hull,
    decompose_to_weights_sampler,
    multiunit_revenues,
    optimal_rank_based,
    revenue_of_weights,
)

q = np.linspace(0, 1, 2001)
v = np.where(q < 0.6, 0.3 + q / 0.6 * 0.1, 0.9 + (q - 0.6) / 0.4 * 0.1)
dist = TabulatedDistribution(q, v)

n = 6
P = multiunit_revenues(dist, n)
hull = concave_hull(P)
print("P_k      ", np.round(P, 4))
print("ironed   ", np.round(hull.Pbar, 4))
print("intervals", hull.intervals)

# %% [markdown]
# A sponsored-search style environment: click rates fall with position.

# %%
env = PositionWeights([1.0, 0.8, 0.65, 0.5, 0.35, 0.2])
best = optimal_rank_based(env, P)
print("environment", env.tolist())
print("optimal    ", np.round(best.w, 4).tolist())
print(f"revenue: environment as is {revenue_of_weights(env, P):.4f}, optimal {revenue_of_weights(best, P):.4f}")

# %% [markdown]
# The optimal weights are implemented by randomly ironing ranks and
# reserving slots.  One run of the randomized procedure:

# %%
rng = np.random.default_rng(0)
realized, log = decompose_to_weights_sampler(env, best, rng)
for op, prob in log:
    print(f"  {op.as_dict()} with probability {prob:.3f}")
print("realized weights", np.round(realized.w, 4).tolist())

# %% [markdown]
# Individual runs differ, but on average they reproduce the target.

# %%
draws = np.array([decompose_to_weights_sampler(env, best, rng)[0].w for _ in range(5000)])
print("mean of 5000 runs", np.round(draws.mean(axis=0), 4).tolist())
