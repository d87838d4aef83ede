"""Counterfactual revenue from the bids of a different auction.

We observe all-pay bids from a position auction with uniformly spaced
weights (the "stair" auction) and ask what a one-unit auction would have
earned from the same bidders.  Values are Beta(2, 2) throughout, but the
estimator never sees them: it only uses the sorted bids and the two
allocation rules.
"""
# %%
import numpy as np

from rankinfer import (
    AllocationRule,
    BetaDistribution,
    BidSample,
    ZFunction,
    equilibrium_bid_allpay,
    estimate_revenue,
    expected_revenue,
    uniform_stair,
)

n = 5
dist = BetaDistribution(2, 2)
incumbent = uniform_stair(n).rule()
target = AllocationRule.multiunit(1, n)

# %% [markdown]
# Equilibrium bids of the incumbent live on a quantile grid.  A data set is
# a bag of bids, so we draw N quantiles, look up the bids and forget the
# quantiles.

# %%
curve = equilibrium_bid_allpay(dist, incumbent)
rng = np.random.default_rng(2)
N = 5_000
sample = BidSample(curve(rng.random(N)))
print(f"{N} bids, median {np.median(sample.bids):.4f}, max {sample.bids[-1]:.4f}")

# %% [markdown]
# The estimate is a fixed linear combination of order statistics.  The
# weights depend on N, the incumbent and the target, never on the data.

# %%
zf = ZFunction(incumbent, target)
res = estimate_revenue(sample, zf)
truth = expected_revenue(dist, target)
print(f"one-unit revenue per agent: estimate {res.value:.5f}, truth {truth:.5f}")
print(f"dropped {res.l_index} extreme bids on each side (delta = {res.delta_used:.4f})")
print(f"error bounds: simple {res.bound_simple:.3f}, rank-based {res.bound_rank:.3f}")

# %% [markdown]
# The bounds are worst-case guarantees and are loose here.  Repeating the
# experiment shows the typical error shrinking like 1/sqrt(N).

# %%
for N in (500, 5_000, 50_000):
    errs = []
    for r in range(200):
        s = BidSample(curve(np.random.default_rng([r, N]).random(N)))
        errs.append(estimate_revenue(s, zf, with_bounds=False).value - truth)
    mad = np.mean(np.abs(errs))
    print(f"N={N:>6}: mean abs error {mad:.5f}, sqrt(N) x error {np.sqrt(N) * mad:.4f}")
