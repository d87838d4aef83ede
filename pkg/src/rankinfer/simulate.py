"""Monte Carlo harness for the counterfactual revenue estimator.

A design infers the revenue of auction ``B`` from bids in the mixture
``C = (1 - eps) A + eps B``.  Each replication draws ``N`` bids from the
equilibrium bid curve of ``C`` and compares the weighted-order-statistic
estimate with the exact revenue of ``B``.
"""
from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Literal, Sequence

import numpy as np

from .alloc import AllocationRule, PositionWeights, mix, uniform_stair
from .equilibrium import (
    DEFAULT_GRID,
    BetaDistribution,
    BidCurve,
    BidFormat,
    ValueDistribution,
    distribution_from_config,
    equilibrium_bid_allpay,
    equilibrium_bid_firstprice,
    expected_revenue,
)
from .estimator import (
    BidSample,
    EstimatorConfig,
    ZFunction,
    error_bound_fp,
    error_bound_simple,
    estimator_weights,
)

Metric = Literal["mad", "median-ad", "relative-median-ad"]
SamplingMode = Literal["grid", "quantile"]
METRICS = ("mad", "median-ad", "relative-median-ad")
CSV_COLUMNS = ["design", "n", "N", "eps", "metric", "value", "normalized", "bound", "ratio"]

__all__ = [
    "DesignSpec",
    "SimulationResult",
    "ClassifierSpec",
    "replication_rng",
    "sample_bids",
    "run_design",
    "builtin_design",
    "builtin_designs",
    "design_from_config",
    "epsilon_sweep",
    "myerson_optimal_revenue",
    "classifier_error_rate",
    "write_csv",
]


def _rule_from_tag(tag, n: int) -> AllocationRule:
    """Accept an AllocationRule, PositionWeights, weight list, or tags like ``"1-unit"``, ``"stair"``."""
    if isinstance(tag, AllocationRule):
        return tag
    if isinstance(tag, PositionWeights):
        return tag.rule()
    if isinstance(tag, str):
        if tag == "stair":
            return uniform_stair(n).rule("stair")
        if tag.endswith("-unit"):
            k = tag[: -len("-unit")]
            k = n - int(k[len("n-") :]) if k.startswith("n-") else int(k)
            return AllocationRule.multiunit(k, n)
        raise ValueError(f"unknown auction tag {tag!r}")
    return PositionWeights(tag).rule()


@dataclass(frozen=True)
class DesignSpec:
    """One Monte Carlo design.  ``target`` defaults to ``auction_b``."""

    label: str
    n: int
    N: int
    auction_a: AllocationRule
    auction_b: AllocationRule
    eps: float = 0.001
    dist: ValueDistribution = field(default_factory=BetaDistribution)
    target: AllocationRule | None = None
    format: BidFormat = "all-pay"
    truncate: bool = False
    replications: int = 8000
    seed: int = 0
    grid_size: int = DEFAULT_GRID
    metric: Metric = "mad"
    sampling: SamplingMode = "grid"

    def __post_init__(self):
        if not 0.0 <= self.eps <= 1.0:
            raise ValueError(f"eps must be in [0, 1], got {self.eps}")
        if self.replications < 1:
            raise ValueError("replications must be >= 1")
        if self.N < 2:
            raise ValueError("N must be >= 2")
        if self.metric not in METRICS:
            raise ValueError(f"unknown metric {self.metric!r}")
        if self.sampling not in ("grid", "quantile"):
            raise ValueError(f"unknown sampling mode {self.sampling!r}")
        for rule in (self.auction_a, self.auction_b, self.target):
            if rule is not None and rule.n != self.n:
                raise ValueError(f"auction over {rule.n} agents in a design with n={self.n}")

    @property
    def incumbent(self) -> AllocationRule:
        return mix(self.auction_a, self.auction_b, self.eps, label="C")

    @property
    def counterfactual(self) -> AllocationRule:
        return self.auction_b if self.target is None else self.target


@dataclass
class SimulationResult:
    design: str
    n: int
    N: int
    eps: float
    metric: str
    value: float
    true_value: float
    estimate_mean: float
    mad: float
    normalized_mad: float
    bound: float
    ratio_to_bound: float
    seed: int
    replications: int
    estimates: np.ndarray | None = field(default=None, repr=False)

    @property
    def normalized(self) -> float:
        """``sqrt(N)`` times the reported metric."""
        return math.sqrt(self.N) * self.value

    def csv_row(self) -> dict:
        return {
            "design": self.design,
            "n": self.n,
            "N": self.N,
            "eps": self.eps,
            "metric": self.metric,
            "value": self.value,
            "normalized": self.normalized,
            "bound": self.bound,
            "ratio": self.ratio_to_bound,
        }

    def to_json(self, include_estimates: bool = False) -> str:
        blob = {
            **self.csv_row(),
            "true_value": self.true_value,
            "estimate_mean": self.estimate_mean,
            "mad": self.mad,
            "normalized_mad": self.normalized_mad,
            "rng": {"seed": self.seed, "replications": self.replications,
                    "derivation": "SeedSequence(seed, spawn_key=(replication,))"},
        }
        if include_estimates and self.estimates is not None:
            blob["estimates"] = self.estimates.tolist()
        return json.dumps(blob, indent=2)


def write_csv(results: Iterable[SimulationResult], path: str | Path | None = None, fh=None) -> None:
    own = fh is None
    if own:
        fh = open(path, "w", newline="")
    try:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for res in results:
            writer.writerow(res.csv_row())
    finally:
        if own:
            fh.close()


def replication_rng(seed: int, replication: int) -> np.random.Generator:
    """Independent stream for one replication; the same for any worker layout."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(replication,)))


def sample_bids(curve: BidCurve, N: int, rng: np.random.Generator, mode: SamplingMode = "grid") -> BidSample:
    """Draw ``N`` bids: resample grid bids with replacement, or map uniform quantiles through ``b``."""
    if mode == "grid":
        bids = curve.bids[rng.integers(0, curve.bids.size, N)]
    elif mode == "quantile":
        bids = curve(rng.random(N))
    else:
        raise ValueError(f"unknown sampling mode {mode!r}")
    return BidSample(bids, curve.format)


def _bid_curve(spec: DesignSpec, rule: AllocationRule) -> BidCurve:
    if spec.format == "all-pay":
        return equilibrium_bid_allpay(spec.dist, rule, spec.grid_size)
    return equilibrium_bid_firstprice(spec.dist, rule, spec.grid_size)


def _estimates(curve, coef, N, seed, reps, mode, threads) -> np.ndarray:
    def chunk(idx):
        return [float(coef @ sample_bids(curve, N, replication_rng(seed, r), mode).bids) for r in idx]

    blocks = np.array_split(np.arange(reps), max(1, threads))
    if threads <= 1:
        parts = [chunk(b) for b in blocks]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(chunk, blocks))
    return np.concatenate([np.asarray(p, dtype=float) for p in parts])


def _aggregate(errors: np.ndarray, truth: float, metric: str) -> float:
    abs_err = np.abs(errors)
    if metric == "mad":
        return float(abs_err.mean())
    if metric == "median-ad":
        return float(np.median(abs_err))
    return float(np.median(abs_err) / abs(truth))


def run_design(spec: DesignSpec, threads: int = 1, keep_estimates: bool = False) -> SimulationResult:
    """Run every replication of ``spec`` and aggregate the absolute errors.

    Results depend only on ``spec`` (including its seed), not on ``threads``.
    """
    C = spec.incumbent
    B = spec.counterfactual
    cfg = EstimatorConfig(truncate=spec.truncate)
    try:
        curve = _bid_curve(spec, C)
        truth = expected_revenue(spec.dist, B, spec.grid_size)
        coef, _ = estimator_weights(ZFunction(C, B), spec.N, cfg, spec.format)
    except (ArithmeticError, ValueError) as exc:
        raise type(exc)(f"design {spec.label} (n={spec.n}, N={spec.N}, eps={spec.eps}): {exc}") from exc
    est = _estimates(curve, coef, spec.N, spec.seed, spec.replications, spec.sampling, threads)
    errors = est - truth
    mad = float(np.abs(errors).mean())
    bound = (error_bound_fp if spec.format == "first-price" else error_bound_simple)(spec.n, spec.N)
    return SimulationResult(
        design=spec.label,
        n=spec.n,
        N=spec.N,
        eps=spec.eps,
        metric=spec.metric,
        value=_aggregate(errors, truth, spec.metric),
        true_value=truth,
        estimate_mean=float(est.mean()),
        mad=mad,
        normalized_mad=math.sqrt(spec.N) * mad,
        bound=bound,
        ratio_to_bound=mad / bound,
        seed=spec.seed,
        replications=spec.replications,
        estimates=est if keep_estimates else None,
    )


_DESIGN_AUCTIONS = {
    1: ("1-unit", "stair"),
    2: ("stair", "1-unit"),
    3: ("n-1-unit", "1-unit"),
    4: ("n-1-unit", "1-unit"),
}


def builtin_design(number: int, n: int, N: int = 1000, truncate: bool | None = None, **kw) -> DesignSpec:
    """Designs 1-4 on Beta(2, 2) values.

    Design 4 uses the ``(n-1)``-unit auction itself as incumbent (``eps = 0``)
    and defaults to the truncated estimator.
    """
    if number not in _DESIGN_AUCTIONS:
        raise ValueError(f"no built-in design {number}; choose 1-4")
    if n < 2:
        raise ValueError("designs need n >= 2")
    a, b = (_rule_from_tag(t, n) for t in _DESIGN_AUCTIONS[number])
    if number == 4:
        kw.setdefault("eps", 0.0)
        truncate = True if truncate is None else truncate
        suffix = "t" if truncate else "u"
    else:
        truncate = False if truncate is None else truncate
        suffix = ""
    return DesignSpec(label=f"builtin:{number}{suffix}", n=n, N=N, auction_a=a, auction_b=b,
                      truncate=truncate, **kw)


def builtin_designs(n: int = 4, N: int = 1000, **kw) -> list[DesignSpec]:
    """Designs 1-3, then Design 4 truncated and untruncated."""
    specs = [builtin_design(i, n, N, **kw) for i in (1, 2, 3)]
    specs.append(builtin_design(4, n, N, truncate=True, **kw))
    specs.append(builtin_design(4, n, N, truncate=False, **kw))
    return specs


def design_from_config(cfg: dict) -> DesignSpec:
    """Build a design from a JSON-style dict.

    Either ``{"builtin": 2, "n": 4, ...}`` or explicit ``auction_a`` /
    ``auction_b`` given as weight lists or tags (``"stair"``, ``"1-unit"``,
    ``"n-1-unit"``).  ``dist`` follows :func:`distribution_from_config`.
    """
    cfg = dict(cfg)
    if "dist" in cfg:
        cfg["dist"] = distribution_from_config(cfg["dist"])
    if "builtin" in cfg:
        number = int(cfg.pop("builtin"))
        n = int(cfg.pop("n"))
        N = int(cfg.pop("N", 1000))
        return builtin_design(number, n, N, **cfg)
    n = int(cfg["n"])
    for key in ("auction_a", "auction_b", "target"):
        if cfg.get(key) is not None:
            cfg[key] = _rule_from_tag(cfg[key], n)
    cfg.setdefault("label", "custom")
    return DesignSpec(**cfg)


def epsilon_sweep(
    base: DesignSpec,
    eps_list: Sequence[float],
    metric: Metric = "relative-median-ad",
    threads: int = 1,
) -> list[SimulationResult]:
    """Run ``base`` at each mixture weight.

    Every point reuses ``base.seed``, so the sweep uses common random numbers
    for the resampled grid indices.
    """
    return [run_design(replace(base, eps=float(e), metric=metric), threads=threads) for e in eps_list]


def myerson_optimal_revenue(
    dist: ValueDistribution,
    k: int,
    n: int,
    mc_samples: int = 200_000,
    rng: np.random.Generator | None = None,
) -> tuple[float, float]:
    """Monte Carlo revenue of the optimal ``k``-unit auction with ``n`` agents.

    Serves up to ``k`` agents with the highest positive virtual values;
    expected revenue equals expected total virtual surplus of the winners.
    Returns ``(total revenue, standard error)``.  Assumes a regular
    distribution, so no value ironing is applied.
    """
    if not 0 <= k <= n:
        raise ValueError(f"k={k} outside 0..{n}")
    if k == 0:
        return 0.0, 0.0
    rng = np.random.default_rng() if rng is None else rng
    v = dist.quantile(rng.random((mc_samples, n)))
    f = dist.pdf(v)
    interior = (v > dist.quantile(0.0)) & (v < dist.quantile(1.0))
    if np.any(interior & (f <= 0)):
        raise ValueError(f"density vanishes inside the support of {dist!r}; oracle unsupported")
    phi = dist.virtual_value(v)
    phi = -np.sort(-phi, axis=1)[:, :k]
    per_draw = np.clip(phi, 0.0, None).sum(axis=1)
    return float(per_draw.mean()), float(per_draw.std(ddof=1) / math.sqrt(mc_samples))


@dataclass(frozen=True)
class ClassifierSpec:
    """Decide whether auction ``y1`` earns more than ``alpha`` times ``y2``."""

    incumbent: AllocationRule
    y1: AllocationRule
    y2: AllocationRule
    alpha: float = 1.0
    N: int = 1000
    dist: ValueDistribution = field(default_factory=BetaDistribution)
    truncate: bool = True
    replications: int = 1000
    seed: int = 0
    grid_size: int = DEFAULT_GRID
    sampling: SamplingMode = "grid"

    def true_gap(self) -> float:
        return expected_revenue(self.dist, self.y1, self.grid_size) - self.alpha * expected_revenue(
            self.dist, self.y2, self.grid_size
        )


def classifier_error_rate(spec: ClassifierSpec, threads: int = 1) -> tuple[float, float]:
    """Fraction of replications whose verdict disagrees with the true sign.

    Returns ``(error rate, true gap)``.  A zero gap has no correct answer and
    is rejected.
    """
    gap = spec.true_gap()
    if abs(gap) < 1e-12:
        raise ValueError("revenue gap is zero; the comparison is degenerate")
    curve = equilibrium_bid_allpay(spec.dist, spec.incumbent, spec.grid_size)
    cfg = EstimatorConfig(truncate=spec.truncate)
    c1, _ = estimator_weights(ZFunction(spec.incumbent, spec.y1), spec.N, cfg)
    c2, _ = estimator_weights(ZFunction(spec.incumbent, spec.y2), spec.N, cfg)
    # the verdict is the sign of a single linear statistic
    est = _estimates(curve, c1 - spec.alpha * c2, spec.N, spec.seed, spec.replications,
                     spec.sampling, threads)
    wrong = (est > 0) != (gap > 0)
    return float(wrong.mean()), float(gap)
