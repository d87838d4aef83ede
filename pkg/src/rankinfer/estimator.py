"""Counterfactual revenue estimation from equilibrium bids.

The revenue of a rank-based auction with allocation rule ``y`` is linear in
the bid quantile function of an incumbent all-pay auction with rule ``x``:

    P_y = E_q[-Z'(q) b(q)] + Z(1) b(1),     Z(q) = (1 - q) y'(q) / x'(q).

Plugging in the empirical quantile function of ``N`` sorted bids turns this
into a weighted order statistic ``sum_i c_i b_(i)``.  Extreme quantiles,
where ``Z`` can blow up, are truncated: bids below ``delta_N`` are rounded to
zero and bids above ``1 - delta_N`` to the largest observed bid.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Literal, Sequence

import numpy as np

from .alloc import AllocationRule, PositionWeights
from .equilibrium import BidFormat

__all__ = [
    "BidSample",
    "EstimatorConfig",
    "ZFunction",
    "EstimateResult",
    "SingularWeightError",
    "SampleTooSmallError",
    "truncation_param",
    "z_value",
    "estimator_weights",
    "estimate_revenue",
    "estimate_revenue_allpay",
    "estimate_revenue_firstprice",
    "estimate_mean_value",
    "estimate_multiunit_revenues",
    "estimate_welfare",
    "compare_revenues",
    "error_bound_simple",
    "error_bound_fp",
    "rxy",
    "error_bound_general",
    "error_bound_rank",
]


class SingularWeightError(ArithmeticError):
    """The weight kernel ``Z`` is infinite at a quantile that must be evaluated."""


class SampleTooSmallError(ValueError):
    """Truncation would discard every sample."""


@dataclass(frozen=True)
class BidSample:
    """Sorted bids ``b_(1) <= ... <= b_(N)`` from one auction format."""

    bids: np.ndarray
    format: BidFormat = "all-pay"

    def __post_init__(self):
        b = np.sort(np.asarray(self.bids, dtype=float).ravel(), kind="stable")
        if b.size < 2:
            raise ValueError(f"need at least 2 bids, got {b.size}")
        if np.any(np.isnan(b)) or b[0] < 0:
            raise ValueError("bids must be non-negative numbers")
        if self.format not in ("all-pay", "first-price"):
            raise ValueError(f"unknown bid format {self.format!r}")
        b.setflags(write=False)
        object.__setattr__(self, "bids", b)

    @property
    def N(self) -> int:
        return self.bids.size

    def scaled(self, c: float) -> "BidSample":
        return BidSample(self.bids * c, self.format)

    @classmethod
    def from_file(cls, path: str | Path, format: BidFormat = "all-pay") -> "BidSample":
        """Read newline-delimited decimals or a single-column CSV (header allowed)."""
        values = []
        for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
            line = line.strip().rstrip(",")
            if not line or line.startswith("#"):
                continue
            try:
                values.append(float(line))
            except ValueError:
                if values or lineno > 1:
                    raise ValueError(f"{path}:{lineno}: not a number: {line!r}") from None
        return cls(np.array(values), format)


@dataclass(frozen=True)
class EstimatorConfig:
    """Estimator options.

    ``truncate=False`` gives the untruncated estimator.  ``delta_override``
    replaces the default truncation fraction.  ``cells_per_sample`` sets the
    Simpson subdivision used for first-price cell weights.
    """

    truncate: bool = True
    delta_override: float | None = None
    cells_per_sample: int = 1

    def __post_init__(self):
        if self.delta_override is not None and not 0.0 <= self.delta_override <= 0.5:
            raise ValueError("delta_override must be in [0, 1/2]")
        if self.cells_per_sample < 1:
            raise ValueError("cells_per_sample must be >= 1")


@dataclass(frozen=True)
class ZFunction:
    """Weight kernel ``Z(q) = (1 - q) y'(q) / x'(q)``.

    With ``mean_value=True`` the kernel is ``1 / x'(q)``, whose estimator
    recovers the mean value instead of a revenue.
    """

    incumbent: AllocationRule
    counterfactual: AllocationRule | None = None
    mean_value: bool = False

    def __post_init__(self):
        if self.counterfactual is None and not self.mean_value:
            raise ValueError("counterfactual rule required unless mean_value=True")
        if self.counterfactual is not None and self.counterfactual.n != self.incumbent.n:
            raise ValueError("incumbent and counterfactual must have the same n")

    @property
    def n(self) -> int:
        return self.incumbent.n

    @property
    def identical(self) -> bool:
        return not self.mean_value and self.counterfactual == self.incumbent

    def log_value(self, q) -> np.ndarray:
        """``log Z(q)``; raises if ``x'(q) == 0`` at any requested point."""
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.identical:
            with np.errstate(divide="ignore"):
                return np.log1p(-q)
        log_x = self.incumbent.log_deriv(q)
        bad = ~np.isfinite(log_x)
        if np.any(bad):
            raise SingularWeightError(f"x'(q) = 0 at q = {q[bad][:3]}; Z is singular there")
        if self.mean_value:
            return -log_x
        with np.errstate(divide="ignore"):
            return np.log1p(-q) + self.counterfactual.log_deriv(q) - log_x

    def __call__(self, q):
        out = np.exp(self.log_value(q))
        return out[0] if np.ndim(q) == 0 else out

    def is_singular(self, q) -> np.ndarray:
        q = np.atleast_1d(np.asarray(q, dtype=float))
        if self.identical:
            return np.zeros(q.shape, dtype=bool)
        return ~np.isfinite(self.incumbent.log_deriv(q))

    def zx_prime(self, q) -> np.ndarray:
        """``Z(q) x'(q)``, which equals ``(1 - q) y'(q)`` (or 1 for the mean)."""
        q = np.asarray(q, dtype=float)
        if self.mean_value:
            return np.ones_like(q)
        if self.identical:
            return (1.0 - q) * self.incumbent.deriv(q)
        return (1.0 - q) * self.counterfactual.deriv(q)


def z_value(zf: ZFunction, q):
    return zf(q)


def truncation_param(N: int, n: int) -> tuple[float, int]:
    """Default truncation ``delta_N = max(25 ln ln N, n) / N`` and ``l = ceil(delta_N N)``."""
    if N < 2 or n < 2:
        raise ValueError(f"need N >= 2 and n >= 2, got N={N}, n={n}")
    loglog = max(math.log(math.log(N)), 0.0)
    delta = min(max(25.0 * loglog, n) / N, 0.5)
    l_index = math.ceil(delta * N - 1e-9)
    if 2 * l_index >= N:
        raise SampleTooSmallError(
            f"sample too small for truncation: N={N}, n={n} gives l={l_index}, 2l >= N"
        )
    return delta, l_index


@dataclass
class EstimateResult:
    value: float
    delta_used: float
    l_index: int
    moderate_range: tuple[int, int]
    bound_simple: float = math.nan
    bound_general: float = math.nan
    bound_rank: float = math.nan
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(
            {
                "value": self.value,
                "delta": self.delta_used,
                "l_index": self.l_index,
                "bounds": {
                    "simple": self.bound_simple,
                    "general": self.bound_general,
                    "rank": self.bound_rank,
                },
                **self.extra,
            }
        )


def _l_index(N: int, n: int, cfg: EstimatorConfig) -> tuple[float, int]:
    if not cfg.truncate:
        return 0.0, 1
    if cfg.delta_override is not None:
        if cfg.delta_override == 0.0:
            return 0.0, 1
        l_index = max(1, math.ceil(cfg.delta_override * N - 1e-9))
        if 2 * l_index >= N:
            raise SampleTooSmallError(f"delta={cfg.delta_override} discards all {N} samples")
        return l_index / N, l_index
    _, l_index = truncation_param(N, n)
    return l_index / N, l_index


def _eval_points(zf: ZFunction, N: int, l_index: int) -> np.ndarray:
    """Quantiles ``(l-1)/N, ..., (N-l)/N``, nudged inward by ``1/(2N)`` where singular."""
    pts = np.arange(l_index - 1, N - l_index + 1) / N
    for j in (0, -1):
        if zf.is_singular(pts[j])[0]:
            pts[j] += 0.5 / N if j == 0 else -0.5 / N
    return pts


def _simpson_cells(f, edges: np.ndarray, m: int) -> np.ndarray:
    """Integral of ``f`` over each ``[edges[i], edges[i+1]]`` with ``m`` Simpson panels."""
    a, b = edges[:-1], edges[1:]
    h = (b - a) / m
    total = np.zeros_like(a)
    for j in range(m):
        lo = a + j * h
        total += h / 6.0 * (f(lo) + 4.0 * f(lo + h / 2) + f(lo + h))
    return total


@functools.lru_cache(maxsize=64)
def _cached_weights(zf: ZFunction, N: int, cfg: EstimatorConfig, format: str):
    _, l_index = _l_index(N, zf.n, cfg)
    pts = _eval_points(zf, N, l_index)
    Z = np.exp(zf.log_value(pts))
    if not np.all(np.isfinite(Z)):
        raise SingularWeightError("Z is infinite inside the moderate quantile range")
    coef = np.zeros(N)
    lo, hi = l_index - 1, N - l_index  # 0-based slice of b_(l)..b_(N-l)
    if format == "all-pay":
        coef[lo:hi] = Z[:-1] - Z[1:]
        coef[N - 1] += Z[-1]
    else:
        x = zf.incumbent(pts)
        coef[lo:hi] = Z[:-1] * x[:-1] - Z[1:] * x[1:] + _simpson_cells(
            zf.zx_prime, pts, cfg.cells_per_sample
        )
        coef[N - 1] += Z[-1] * float(zf.incumbent(1.0))
    coef.setflags(write=False)
    return coef, l_index


def estimator_weights(
    zf: ZFunction, N: int, cfg: EstimatorConfig = EstimatorConfig(), format: BidFormat = "all-pay"
) -> tuple[np.ndarray, int]:
    """Coefficients ``c`` with ``estimate = c @ sorted_bids``, and the index ``l``.

    Results are cached per ``(zf, N, cfg, format)`` so repeated Monte Carlo
    replications reuse them.
    """
    return _cached_weights(zf, N, cfg, format)


def _bounds(zf: ZFunction, N: int, fmt: str, delta: float) -> dict:
    n = zf.n
    out = {
        "bound_simple": error_bound_fp(n, N) if fmt == "first-price" else error_bound_simple(n, N)
    }
    if zf.mean_value:
        return out
    d = delta
    if d == 0.0:
        try:
            d = truncation_param(N, n)[1] / N
        except SampleTooSmallError:
            pass
    try:
        out["bound_general"] = error_bound_general(zf.incumbent, zf.counterfactual, N, delta=d)
        out["bound_rank"] = error_bound_rank(zf.incumbent, zf.counterfactual, N, delta=d)
    except SingularWeightError:
        out["bound_general"] = out["bound_rank"] = math.inf
    return out


def estimate_revenue(
    sample: BidSample,
    zf: ZFunction,
    cfg: EstimatorConfig = EstimatorConfig(),
    with_bounds: bool = True,
) -> EstimateResult:
    """Weighted-order-statistic estimate for either bid format."""
    coef, l_index = estimator_weights(zf, sample.N, cfg, sample.format)
    value = float(coef @ sample.bids)
    delta = 0.0 if l_index == 1 and (not cfg.truncate or cfg.delta_override == 0.0) else l_index / sample.N
    bounds = _bounds(zf, sample.N, sample.format, delta) if with_bounds else {}
    return EstimateResult(value, delta, l_index, (l_index, sample.N - l_index), **bounds)


def estimate_revenue_allpay(sample: BidSample, zf: ZFunction, cfg: EstimatorConfig = EstimatorConfig()):
    if sample.format != "all-pay":
        raise ValueError("expected an all-pay bid sample")
    return estimate_revenue(sample, zf, cfg)


def estimate_revenue_firstprice(sample: BidSample, zf: ZFunction, cfg: EstimatorConfig = EstimatorConfig()):
    if sample.format != "first-price":
        raise ValueError("expected a first-price bid sample")
    return estimate_revenue(sample, zf, cfg)


def estimate_mean_value(
    sample: BidSample, incumbent: AllocationRule, cfg: EstimatorConfig = EstimatorConfig()
) -> EstimateResult:
    """Estimate the mean value ``E[v]`` with kernel ``1 / x'(q)``."""
    return estimate_revenue(sample, ZFunction(incumbent, mean_value=True), cfg)


def estimate_multiunit_revenues(
    sample: BidSample, incumbent: AllocationRule, cfg: EstimatorConfig = EstimatorConfig()
) -> np.ndarray:
    """Estimates of ``(P_0, ..., P_n)``; the endpoints are exactly zero."""
    n = incumbent.n
    P = np.zeros(n + 1)
    for k in range(1, n):
        zf = ZFunction(incumbent, AllocationRule.multiunit(k, n))
        P[k] = estimate_revenue(sample, zf, cfg, with_bounds=False).value
    return P


def estimate_welfare(
    sample: BidSample,
    incumbent: AllocationRule,
    target: PositionWeights,
    cfg: EstimatorConfig = EstimatorConfig(),
) -> float:
    """Per-agent welfare of ``target`` as ``w1 vbar - sum_k (w1 - w_{k+1}) P_k / k``."""
    n = incumbent.n
    if target.n != n:
        raise ValueError("target weights and incumbent differ in n")
    w = target.w
    total = 0.0
    if w[0] != 0.0:
        total += w[0] * estimate_mean_value(sample, incumbent, cfg).value
    for k in range(1, n):
        gap = w[0] - w[k]
        if gap != 0.0:
            zf = ZFunction(incumbent, AllocationRule.multiunit(k, n))
            total -= gap * estimate_revenue(sample, zf, cfg, with_bounds=False).value / k
    return float(total)


def compare_revenues(
    sample: BidSample,
    incumbent: AllocationRule,
    y1: AllocationRule,
    y2: AllocationRule,
    alpha: float,
    cfg: EstimatorConfig = EstimatorConfig(),
) -> int:
    """1 if the estimated revenue of ``y1`` exceeds ``alpha`` times that of ``y2``, else 0."""
    p1 = estimate_revenue(sample, ZFunction(incumbent, y1), cfg, with_bounds=False).value
    p2 = estimate_revenue(sample, ZFunction(incumbent, y2), cfg, with_bounds=False).value
    return int(p1 > alpha * p2)


def error_bound_simple(n: int, N: int) -> float:
    """All-pay worst-case bound ``16 n^2 ln N / sqrt(N)``."""
    return 16.0 * n * n * math.log(N) / math.sqrt(N)


def error_bound_fp(n: int, N: int) -> float:
    """First-price worst-case bound ``28 n^2 ln N / sqrt(N)``."""
    return 28.0 * n * n * math.log(N) / math.sqrt(N)


def _moderate_grid(delta: float, grid_size: int) -> np.ndarray:
    return np.linspace(delta, 1.0 - delta, grid_size + 1)


def rxy(
    x: AllocationRule, y: AllocationRule, delta: float = 0.0, grid_size: int = 10_000
) -> float:
    """``sup y' * max(1, log sup_{y' >= 1} x'/y', log sup y'/x')`` on ``[delta, 1 - delta]``."""
    q = _moderate_grid(delta, grid_size)
    log_x = x.log_deriv(q)
    log_y = y.log_deriv(q)
    if x == y:
        ratio_up = ratio_down = 0.0
    else:
        if np.any(~np.isfinite(log_x) & np.isfinite(log_y)):
            raise SingularWeightError("y'/x' is unbounded on the evaluation range")
        steep = log_y >= 0.0
        ratio_up = float(np.max(log_x[steep] - log_y[steep])) if steep.any() else -math.inf
        finite = np.isfinite(log_y)
        ratio_down = float(np.max(log_y[finite] - log_x[finite])) if finite.any() else -math.inf
    sup_y = float(np.exp(np.max(log_y)))
    return sup_y * max(1.0, ratio_up, ratio_down)


def error_bound_general(
    x: AllocationRule, y: AllocationRule, N: int, delta: float = 0.0, grid_size: int = 10_000
) -> float:
    """``80 R_xy / sqrt(N)``."""
    return 80.0 * rxy(x, y, delta, grid_size) / math.sqrt(N)


def error_bound_rank(
    x: AllocationRule, y: AllocationRule, N: int, delta: float = 0.0, grid_size: int = 10_000
) -> float:
    """``80 n log sup_q (n y'/x') / sqrt(N)``, the bound for general rank-based ``y``."""
    n = x.n
    q = _moderate_grid(delta, grid_size)
    log_x = x.log_deriv(q)
    log_y = y.log_deriv(q)
    if np.any(~np.isfinite(log_x) & np.isfinite(log_y)):
        raise SingularWeightError("y'/x' is unbounded on the evaluation range")
    finite = np.isfinite(log_y)
    log_sup = math.log(n) + float(np.max(log_y[finite] - log_x[finite])) if finite.any() else 0.0
    return 80.0 * n * max(log_sup, 0.0) / math.sqrt(N)
