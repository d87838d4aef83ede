"""Counterfactual revenue inference and optimization for rank-based auctions."""
from .alloc import (
    AllocationRule,
    PositionWeights,
    is_feasible,
    mix,
    multiunit_weights,
    uniform_stair,
    universal_b,
)
from .equilibrium import (
    BetaDistribution,
    BidCurve,
    TabulatedDistribution,
    UniformDistribution,
    equilibrium_bid_allpay,
    equilibrium_bid_firstprice,
    expected_revenue,
    expected_welfare,
    multiunit_revenues,
)
from .estimator import (
    BidSample,
    EstimatorConfig,
    ZFunction,
    compare_revenues,
    estimate_multiunit_revenues,
    estimate_revenue,
    estimate_welfare,
)
from .optimize import (
    concave_hull,
    decompose_to_weights_sampler,
    sample_decompositions,
    optimal_rank_based,
    optimal_strict,
    revenue_of_weights,
)
from .simulate import DesignSpec, builtin_design, builtin_designs, run_design

__version__ = "0.1.0"
