"""Value distributions, equilibrium bids and exact revenues on a quantile grid.

All integrals over quantiles use the composite trapezoid rule on ``G + 1``
equally spaced points ``q_j = j / G``.  The defaults reproduce the simulation
methodology of averaging integrands on a uniform grid.
"""
from __future__ import annotations

import csv
import functools
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Literal

import numpy as np
from scipy import integrate, stats
from scipy.special import betaln, xlog1py, xlogy

from .alloc import AllocationRule, PositionWeights

DEFAULT_GRID = 10_000
SERVED_TOL = 1e-9

BidFormat = Literal["all-pay", "first-price"]

__all__ = [
    "DEFAULT_GRID",
    "ValueDistribution",
    "BetaDistribution",
    "UniformDistribution",
    "TabulatedDistribution",
    "distribution_from_config",
    "quantile_grid",
    "BidCurve",
    "DegenerateRuleError",
    "revenue_curve",
    "revenue_curve_deriv",
    "equilibrium_bid_allpay",
    "equilibrium_bid_firstprice",
    "expected_revenue",
    "expected_revenue_by_parts",
    "multiunit_revenues",
    "mean_value",
    "order_statistic_value",
    "order_statistic_values",
    "expected_welfare",
    "welfare_from_revenues",
    "infer_values_allpay",
    "infer_values_firstprice",
]


class DegenerateRuleError(ValueError):
    """Raised for allocation rules with identically zero slope."""


@functools.lru_cache(maxsize=16)
def quantile_grid(grid_size: int = DEFAULT_GRID) -> np.ndarray:
    if grid_size < 2:
        raise ValueError("grid needs at least 2 cells")
    q = np.linspace(0.0, 1.0, grid_size + 1)
    q.setflags(write=False)
    return q


class ValueDistribution:
    """A continuous value distribution supported inside ``[0, 1]``.

    Subclasses provide ``quantile`` (the inverse CDF ``v(q)``), ``cdf`` and
    ``pdf``.  Quantile values on a grid are cached per grid size.
    """

    label: str = ""

    def quantile(self, q):
        raise NotImplementedError

    def cdf(self, v):
        raise NotImplementedError

    def pdf(self, v):
        raise NotImplementedError

    def quantile_derivative(self, q):
        """``v'(q) = 1 / f(v(q))``; infinite where the density vanishes."""
        f = np.asarray(self.pdf(self.quantile(q)), dtype=float)
        with np.errstate(divide="ignore"):
            return 1.0 / f

    def virtual_value(self, v):
        v = np.asarray(v, dtype=float)
        f = np.asarray(self.pdf(v), dtype=float)
        if np.any(f <= 0):
            raise ValueError(f"{self.label}: density vanishes, virtual value undefined")
        return v - (1.0 - self.cdf(v)) / f

    def values_on_grid(self, grid_size: int = DEFAULT_GRID) -> np.ndarray:
        cache = self.__dict__.setdefault("_grid_cache", {})
        if grid_size not in cache:
            v = np.asarray(self.quantile(quantile_grid(grid_size)), dtype=float)
            v = np.maximum.accumulate(v)
            v.setflags(write=False)
            cache[grid_size] = v
        return cache[grid_size]

    def __repr__(self):
        return f"{type(self).__name__}({self.label!r})"


class BetaDistribution(ValueDistribution):
    """Beta(a, b) values; Beta(2, 2) uses the closed-form cubic inverse."""

    def __init__(self, a: float = 2.0, b: float = 2.0):
        if a <= 0 or b <= 0:
            raise ValueError("beta parameters must be positive")
        self.a, self.b = float(a), float(b)
        self.label = f"beta({self.a:g},{self.b:g})"
        self._dist = stats.beta(self.a, self.b)

    def quantile(self, q):
        q = np.asarray(q, dtype=float)
        if self.a == 2.0 and self.b == 2.0:
            # root of 3v^2 - 2v^3 = q on [0, 1]
            phi = np.arccos(np.clip(1.0 - 2.0 * q, -1.0, 1.0))
            out = 0.5 + np.cos(phi / 3.0 - 2.0 * np.pi / 3.0)
            out = np.where(q <= 0.0, 0.0, np.where(q >= 1.0, 1.0, out))
            return np.clip(out, 0.0, 1.0)
        return self._dist.ppf(q)

    def cdf(self, v):
        return self._dist.cdf(v)

    def pdf(self, v):
        return self._dist.pdf(v)


class UniformDistribution(ValueDistribution):
    label = "uniform"

    def quantile(self, q):
        return np.asarray(q, dtype=float)

    def cdf(self, v):
        return np.clip(np.asarray(v, dtype=float), 0.0, 1.0)

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        return np.where((v >= 0) & (v <= 1), 1.0, 0.0)


class TabulatedDistribution(ValueDistribution):
    """Piecewise-linear quantile function through ``(q_i, v_i)`` knots.

    Knots must start at ``q = 0`` and end at ``q = 1``; values are made
    non-decreasing at load time.
    """

    def __init__(self, q_knots, v_knots, label: str = "table"):
        q = np.asarray(q_knots, dtype=float)
        v = np.asarray(v_knots, dtype=float)
        if q.shape != v.shape or q.ndim != 1 or q.size < 2:
            raise ValueError("need matching 1-d knot arrays with at least 2 points")
        if not (q[0] == 0.0 and q[-1] == 1.0 and np.all(np.diff(q) > 0)):
            raise ValueError("quantile knots must increase strictly from 0 to 1")
        if np.any(v < 0) or np.any(v > 1):
            raise ValueError("tabulated values must lie in [0, 1]")
        self.q_knots = q
        self.v_knots = np.maximum.accumulate(v)
        self.label = label

    @classmethod
    def from_file(cls, path: str | Path) -> "TabulatedDistribution":
        """Two-column ``quantile,value`` file (CSV or whitespace separated)."""
        path = Path(path)
        rows = []
        for line in path.read_text().splitlines():
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.replace(",", " ").split()
            try:
                rows.append((float(parts[0]), float(parts[1])))
            except (ValueError, IndexError):
                if rows:
                    raise ValueError(f"{path}: bad table row {line!r}") from None
                continue  # header
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1], label=f"table:{path.name}")

    def quantile(self, q):
        return np.interp(q, self.q_knots, self.v_knots)

    def cdf(self, v):
        v = np.asarray(v, dtype=float)
        vk, qk = self.v_knots, self.q_knots
        keep = np.concatenate(([True], np.diff(vk) > 0))
        # right-continuous inverse on flat stretches
        return np.interp(v, vk[keep], qk[keep], left=0.0, right=1.0)

    def pdf(self, v):
        v = np.asarray(v, dtype=float)
        dv = np.diff(self.v_knots)
        dq = np.diff(self.q_knots)
        with np.errstate(divide="ignore", invalid="ignore"):
            dens = np.where(dv > 0, dq / dv, 0.0)
        idx = np.clip(np.searchsorted(self.v_knots, v, side="right") - 1, 0, dens.size - 1)
        inside = (v >= self.v_knots[0]) & (v <= self.v_knots[-1])
        return np.where(inside, dens[idx], 0.0)


def distribution_from_config(cfg: dict | str) -> ValueDistribution:
    """Build a distribution from ``{"beta": [a, b]}``, ``{"uniform": []}`` or ``{"table": path}``."""
    if isinstance(cfg, str):
        cfg = json.loads(cfg)
    if not isinstance(cfg, dict) or len(cfg) != 1:
        raise ValueError(f"distribution config must have exactly one key, got {cfg!r}")
    (kind, arg), = cfg.items()
    if kind == "beta":
        a, b = arg
        return BetaDistribution(a, b)
    if kind == "uniform":
        return UniformDistribution()
    if kind == "table":
        return TabulatedDistribution.from_file(arg)
    raise ValueError(f"unknown distribution kind {kind!r}")


def revenue_curve(dist: ValueDistribution, q):
    """``R(q) = v(q) (1 - q)``."""
    q = np.asarray(q, dtype=float)
    return np.asarray(dist.quantile(q), dtype=float) * (1.0 - q)


def revenue_curve_deriv(dist: ValueDistribution, q):
    """``R'(q) = v'(q) (1 - q) - v(q)``."""
    q = np.asarray(q, dtype=float)
    return dist.quantile_derivative(q) * (1.0 - q) - dist.quantile(q)


@dataclass(frozen=True)
class BidCurve:
    """Equilibrium bids on the quantile grid ``q_j = j / G``."""

    grid: np.ndarray
    bids: np.ndarray
    format: BidFormat
    rule: AllocationRule = field(repr=False)

    @property
    def grid_size(self) -> int:
        return self.grid.size - 1

    def __call__(self, q):
        return np.interp(q, self.grid, self.bids)

    def integral(self) -> float:
        return float(np.trapezoid(self.bids, self.grid))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["quantile", "bid"])
            for q, b in zip(self.grid, self.bids):
                writer.writerow([repr(float(q)), repr(float(b))])


def _cumtrapz(y: np.ndarray, x: np.ndarray) -> np.ndarray:
    return integrate.cumulative_trapezoid(y, x, initial=0.0)


def equilibrium_bid_allpay(
    dist: ValueDistribution, rule: AllocationRule, grid_size: int = DEFAULT_GRID
) -> BidCurve:
    """All-pay equilibrium bids ``b(q) = int_0^q v(r) x'(r) dr``."""
    if rule.is_constant:
        raise DegenerateRuleError(
            "degenerate incumbent: allocation rule is constant, bids are identically zero"
        )
    q = quantile_grid(grid_size)
    b = _cumtrapz(dist.values_on_grid(grid_size) * rule.deriv(q), q)
    b = np.maximum.accumulate(b)
    b.setflags(write=False)
    return BidCurve(q, b, "all-pay", rule)


def equilibrium_bid_firstprice(
    dist: ValueDistribution, rule: AllocationRule, grid_size: int = DEFAULT_GRID
) -> BidCurve:
    """First-price bids from the payment identity ``b_ap = x b_fp``.

    Where ``x(q) <= 1e-9`` the ratio is numerically meaningless; those
    quantiles get the limit value ``v(q)``, capped at the first served bid so
    that the curve stays non-decreasing.
    """
    ap = equilibrium_bid_allpay(dist, rule, grid_size)
    q = ap.grid
    x = rule(q)
    served = x > SERVED_TOL
    b = np.empty_like(ap.bids)
    b[served] = ap.bids[served] / x[served]
    if not served.all():
        first = int(np.argmax(served)) if served.any() else q.size - 1
        cap = b[first] if served.any() else np.inf
        v = dist.values_on_grid(grid_size)
        b[~served] = np.minimum(v[~served], cap)
    b.setflags(write=False)
    return BidCurve(q, b, "first-price", rule)


def expected_revenue(
    dist: ValueDistribution, rule: AllocationRule, grid_size: int = DEFAULT_GRID
) -> float:
    """Per-agent revenue ``R(0) x(0) + E_q[R(q) x'(q)]`` by trapezoid quadrature.

    The constant term is zero whenever the lowest value is 0.
    """
    q = quantile_grid(grid_size)
    r = dist.values_on_grid(grid_size) * (1.0 - q)
    return float(r[0] * rule(0.0) + np.trapezoid(r * rule.deriv(q), q))


def expected_revenue_by_parts(dist: ValueDistribution, rule: AllocationRule) -> float:
    """Per-agent revenue in the form ``R(1) x(1) - E_q[R'(q) x(q)]``.

    Evaluated in value space, where ``R'(q) dq = (1 - F(v) - v f(v)) dv``, by
    adaptive quadrature.  This is an independent route to
    :func:`expected_revenue`.
    """
    lo = float(dist.quantile(0.0))
    hi = float(dist.quantile(1.0))

    def integrand(v):
        F = float(np.clip(dist.cdf(v), 0.0, 1.0))
        return float(rule(F)) * (v * float(dist.pdf(v)) - (1.0 - F))

    points = None
    if isinstance(dist, TabulatedDistribution):
        points = [p for p in dist.v_knots if lo < p < hi][:200]
    val, _ = integrate.quad(integrand, lo, hi, limit=400, epsabs=1e-13, epsrel=1e-12, points=points)
    return val


def multiunit_revenues(
    dist: ValueDistribution, n: int, grid_size: int = DEFAULT_GRID
) -> np.ndarray:
    """``(P_0, ..., P_n)``: per-agent revenues of the k-unit auctions."""
    P = np.zeros(n + 1)
    for k in range(1, n):
        P[k] = expected_revenue(dist, AllocationRule.multiunit(k, n), grid_size)
    return P


def mean_value(dist: ValueDistribution, grid_size: int = DEFAULT_GRID) -> float:
    q = quantile_grid(grid_size)
    return float(np.trapezoid(dist.values_on_grid(grid_size), q))


def _order_stat_density(k: int, n: int, q: np.ndarray) -> np.ndarray:
    # quantile of the k-th highest of n is Beta(n - k + 1, k)
    a, b = n - k + 1, k
    return np.exp(xlogy(a - 1, q) + xlog1py(b - 1, -q) - betaln(a, b))


def order_statistic_value(
    dist: ValueDistribution, k: int, n: int, grid_size: int = DEFAULT_GRID
) -> float:
    """``V_k``: expected k-th highest of n values."""
    if not 1 <= k <= n:
        raise ValueError(f"order statistic k={k} outside 1..{n}")
    q = quantile_grid(grid_size)
    return float(np.trapezoid(dist.values_on_grid(grid_size) * _order_stat_density(k, n, q), q))


def order_statistic_values(
    dist: ValueDistribution, n: int, grid_size: int = DEFAULT_GRID
) -> np.ndarray:
    return np.array([order_statistic_value(dist, k, n, grid_size) for k in range(1, n + 1)])


def expected_welfare(
    dist: ValueDistribution, w: PositionWeights, grid_size: int = DEFAULT_GRID
) -> float:
    """Per-agent welfare ``(1/n) sum_k w[k] V_k``."""
    V = order_statistic_values(dist, w.n, grid_size)
    return float(np.dot(w.w, V) / w.n)


def welfare_from_revenues(w: PositionWeights, mean: float, P: np.ndarray) -> float:
    """Welfare as ``w[1] vbar - sum_k (w[1] - w[k+1]) P_k / k``."""
    n = w.n
    P = np.asarray(P, dtype=float)
    if P.size != n + 1:
        raise ValueError(f"need P_0..P_{n}, got {P.size} entries")
    k = np.arange(1, n)
    return float(w.w[0] * mean - np.sum((w.w[0] - w.w[k]) * P[k] / k))


def infer_values_allpay(curve: BidCurve) -> np.ndarray:
    """Diagnostic inversion ``v = b' / x'`` with a finite-difference ``b'``."""
    db = np.gradient(curve.bids, curve.grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        return db / curve.rule.deriv(curve.grid)


def infer_values_firstprice(curve: BidCurve) -> np.ndarray:
    """Diagnostic inversion ``v = b + x b' / x'`` for first-price bids.

    Relies on a numerical derivative of the bid curve, so it is noisy where
    ``x'`` is small; the revenue estimators never use it.
    """
    db = np.gradient(curve.bids, curve.grid)
    x = curve.rule(curve.grid)
    with np.errstate(divide="ignore", invalid="ignore"):
        return curve.bids + x * db / curve.rule.deriv(curve.grid)
