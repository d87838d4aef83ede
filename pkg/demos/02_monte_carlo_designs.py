"""Monte Carlo designs: how hard is each counterfactual?

Each design pairs an auction A with an auction B.  Bids come from the
mixture (1 - eps) A + eps B and we estimate the revenue of B.  When B
allocates very differently from A, the few bids that carry information
about B get large weights and the estimate gets noisier.

    design 1: A = one-unit,  B = stair
    design 2: A = stair,     B = one-unit
    design 3: A = (n-1)-unit, B = one-unit
    design 4: design 3 with eps = 0, truncated and untruncated

The table reports sqrt(N) times the mean absolute error.
"""
# %%
import sys

from rankinfer.simulate import builtin_designs, run_design, write_csv

reps = 500  # the full tables use 8000

results = []
for n in (2, 4, 8):
    for spec in builtin_designs(n=n, N=1000, replications=reps):
        res = run_design(spec)
        results.append(res)
        print(f"{spec.label:<11} n={n}: normalized MAD {res.normalized:.4f}")

# %% [markdown]
# With two agents every design collapses to the same pair of auctions, so
# the first rows agree exactly.  CSV output for plotting:

# %%
write_csv(results, fh=sys.stdout)
