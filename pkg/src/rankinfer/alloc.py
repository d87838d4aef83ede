"""Allocation rules of rank-based (position) auctions in quantile space.

Every rank-based auction with n agents is a mixture of the n + 1
highest-k-bids-win auctions.  The k-unit allocation rule is the regularized
incomplete beta function ``I_q(n - k, k)`` and its slope is the corresponding
beta density, which is evaluated in log space so that large n neither
overflows nor underflows.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import betainc, gammaln, xlog1py, xlogy

WEIGHT_TOL = 1e-12

__all__ = [
    "PositionWeights",
    "AllocationRule",
    "multiunit_alloc",
    "multiunit_alloc_deriv",
    "log_multiunit_alloc_deriv",
    "position_alloc",
    "position_alloc_deriv",
    "marginal_weights",
    "cumulative_weights",
    "weights_from_marginal",
    "is_feasible",
    "mix",
    "uniform_stair",
    "universal_b",
    "multiunit_weights",
    "max_slope_bound",
]


def _check_q(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    if np.any((q < 0) | (q > 1)) or np.any(np.isnan(q)):
        raise ValueError("quantile must lie in [0, 1]")
    return q


def _check_kn(k: int, n: int) -> None:
    if n < 1:
        raise ValueError(f"need n >= 1 agents, got {n}")
    if not 0 <= k <= n:
        raise ValueError(f"unit count k={k} outside 0..{n}")


def multiunit_alloc(k: int, n: int, q):
    """Probability that an agent at quantile ``q`` wins in the k-unit auction."""
    _check_kn(k, n)
    q = _check_q(q)
    if k == 0:
        out = np.zeros_like(q)
    elif k == n:
        out = np.ones_like(q)
    else:
        out = betainc(n - k, k, q)
    return out[()] if out.ndim == 0 else out


def log_multiunit_alloc_deriv(k: int, n: int, q):
    """Natural log of the k-unit allocation slope; ``-inf`` where the slope is 0."""
    _check_kn(k, n)
    q = _check_q(q)
    if k == 0 or k == n:
        out = np.full_like(q, -np.inf)
    else:
        # (n-1) C(n-2, k-1) = 1 / B(n-k, k); xlogy gives q**0 == 1 at q == 0
        log_norm = gammaln(n) - gammaln(n - k) - gammaln(k)
        out = log_norm + xlogy(n - k - 1, q) + xlog1py(k - 1, -q)
    return out[()] if out.ndim == 0 else out


def multiunit_alloc_deriv(k: int, n: int, q):
    """Slope ``x_k'(q) = (n-1) C(n-2, k-1) q^(n-k-1) (1-q)^(k-1)``."""
    return np.exp(log_multiunit_alloc_deriv(k, n, q))


@dataclass(frozen=True)
class PositionWeights:
    """Per-rank service probabilities ``1 >= w[1] >= ... >= w[n] >= 0``.

    ``w`` is stored 0-based: ``w[0]`` is the weight of the top rank.
    """

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=float).ravel()
        if w.size < 1:
            raise ValueError("position weights must be non-empty")
        if np.any(np.isnan(w)):
            raise ValueError("position weights contain NaN")
        if w[0] > 1 + WEIGHT_TOL or w[-1] < -WEIGHT_TOL:
            raise ValueError("position weights must lie in [0, 1]")
        if np.any(np.diff(w) > WEIGHT_TOL):
            raise ValueError(f"position weights must be non-increasing: {w}")
        w = np.clip(w, 0.0, 1.0)
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def n(self) -> int:
        return self.w.size

    def __len__(self) -> int:
        return self.w.size

    def __iter__(self):
        return iter(self.w)

    def __eq__(self, other):
        if not isinstance(other, PositionWeights):
            return NotImplemented
        return self.n == other.n and bool(np.array_equal(self.w, other.w))

    def __hash__(self):
        return hash(self.w.tobytes())

    def allclose(self, other: "PositionWeights", atol: float = 1e-12) -> bool:
        return self.n == other.n and bool(np.allclose(self.w, other.w, rtol=0, atol=atol))

    def rule(self, label: str = "") -> "AllocationRule":
        return AllocationRule(marginal_weights(self), label=label)

    def tolist(self) -> list[float]:
        return [float(v) for v in self.w]


def marginal_weights(w: PositionWeights | Sequence[float]) -> np.ndarray:
    """Marginal weights indexed ``0..n``: ``wbar[k] = w[k] - w[k+1]``, ``wbar[0] = 1 - w[1]``."""
    if not isinstance(w, PositionWeights):
        w = PositionWeights(w)
    padded = np.concatenate(([1.0], w.w, [0.0]))
    return np.clip(-np.diff(padded), 0.0, None)


def cumulative_weights(w: PositionWeights | Sequence[float]) -> np.ndarray:
    """Cumulative weights indexed ``0..n`` with ``W[0] = 0``."""
    if not isinstance(w, PositionWeights):
        w = PositionWeights(w)
    return np.concatenate(([0.0], np.cumsum(w.w)))


def weights_from_marginal(wbar: Sequence[float]) -> PositionWeights:
    """Inverse of :func:`marginal_weights`: ``w[k] = sum_{j >= k} wbar[j]``."""
    wbar = np.asarray(wbar, dtype=float)
    if wbar.ndim != 1 or wbar.size < 2:
        raise ValueError("marginal weights need entries for k = 0..n, n >= 1")
    tail = np.cumsum(wbar[::-1])[::-1]
    return PositionWeights(tail[1:])


@dataclass(frozen=True)
class AllocationRule:
    """A rank-based allocation rule stored as a distribution over unit counts.

    ``marginal[k]`` is the probability that the k-unit auction is run,
    ``k = 0..n``.
    """

    marginal: np.ndarray
    label: str = field(default="", compare=False)

    def __post_init__(self):
        m = np.array(self.marginal, dtype=float).ravel()
        if m.size < 2:
            raise ValueError("marginal weights need entries for k = 0..n, n >= 1")
        if np.any(m < -WEIGHT_TOL):
            raise ValueError("marginal weights must be non-negative")
        if abs(m.sum() - 1.0) > 1e-9:
            raise ValueError(f"marginal weights must sum to 1, got {m.sum()!r}")
        m = np.clip(m, 0.0, None)
        m.setflags(write=False)
        object.__setattr__(self, "marginal", m)

    def __eq__(self, other):
        if not isinstance(other, AllocationRule):
            return NotImplemented
        return bool(np.array_equal(self.marginal, other.marginal))

    def __hash__(self):
        return hash(self.marginal.tobytes())

    @property
    def n(self) -> int:
        return self.marginal.size - 1

    @classmethod
    def from_weights(cls, w: PositionWeights | Sequence[float], label: str = "") -> "AllocationRule":
        return cls(marginal_weights(w), label=label)

    @classmethod
    def multiunit(cls, k: int, n: int) -> "AllocationRule":
        _check_kn(k, n)
        m = np.zeros(n + 1)
        m[k] = 1.0
        return cls(m, label=f"{k}-unit")

    @property
    def weights(self) -> PositionWeights:
        return weights_from_marginal(self.marginal)

    @property
    def support(self) -> np.ndarray:
        """Unit counts carrying positive probability."""
        return np.flatnonzero(self.marginal > 0)

    @property
    def is_constant(self) -> bool:
        """True when only the 0- and n-unit auctions are mixed (x' == 0)."""
        return not np.any(self.marginal[1:-1] > 0)

    def __call__(self, q):
        return position_alloc(self, q)

    def deriv(self, q):
        return position_alloc_deriv(self, q)

    def log_deriv(self, q):
        """Log of the slope, computed as a log-sum-exp over the mixture."""
        q = _check_q(q)
        ks = [k for k in self.support if 0 < k < self.n]
        if not ks:
            out = np.full_like(q, -np.inf)
            return out[()] if out.ndim == 0 else out
        terms = np.stack(
            [np.log(self.marginal[k]) + log_multiunit_alloc_deriv(k, self.n, q) for k in ks]
        )
        top = terms.max(axis=0)
        finite = np.isfinite(top)
        safe_top = np.where(finite, top, 0.0)
        with np.errstate(divide="ignore"):
            lse = safe_top + np.log(np.exp(terms - safe_top).sum(axis=0))
        out = np.where(finite, lse, -np.inf)
        return out[()] if out.ndim == 0 else out


def position_alloc(rule: AllocationRule, q):
    """Allocation ``x(q) = sum_k wbar[k] x_k(q)``."""
    q = _check_q(q)
    out = np.zeros_like(q)
    for k in rule.support:
        out = out + rule.marginal[k] * multiunit_alloc(int(k), rule.n, q)
    return out[()] if out.ndim == 0 else out


def position_alloc_deriv(rule: AllocationRule, q):
    """Slope ``x'(q) = sum_k wbar[k] x_k'(q)``."""
    q = _check_q(q)
    out = np.zeros_like(q)
    for k in rule.support:
        if 0 < k < rule.n:
            out = out + rule.marginal[k] * multiunit_alloc_deriv(int(k), rule.n, q)
    return out[()] if out.ndim == 0 else out


def is_feasible(target: PositionWeights, env: PositionWeights, tol: float = WEIGHT_TOL) -> bool:
    """Whether a rank-based auction in ``env`` can induce ``target``.

    Holds iff every prefix sum of ``target`` is at most that of ``env``.
    """
    if target.n != env.n:
        raise ValueError(f"weight vectors differ in length: {target.n} != {env.n}")
    return bool(np.all(cumulative_weights(target) <= cumulative_weights(env) + tol))


def mix(a: AllocationRule, b: AllocationRule, eps: float, label: str = "") -> AllocationRule:
    """The rule that runs ``b`` with probability ``eps`` and ``a`` otherwise."""
    if a.n != b.n:
        raise ValueError(f"cannot mix rules over {a.n} and {b.n} agents")
    if not 0.0 <= eps <= 1.0:
        raise ValueError(f"mixture weight must be in [0, 1], got {eps}")
    if eps == 0.0:
        return a
    if eps == 1.0:
        return b
    return AllocationRule((1.0 - eps) * a.marginal + eps * b.marginal, label=label)


def uniform_stair(n: int) -> PositionWeights:
    """Weights ``w[k] = (n - k) / (n - 1)``; the induced rule is ``x(q) = q``."""
    if n < 2:
        raise ValueError("uniform stair needs n >= 2")
    k = np.arange(1, n + 1)
    return PositionWeights((n - k) / (n - 1))


def universal_b(n: int) -> PositionWeights:
    """Universal B test weights: 1 at the top rank, 1/2 in between, 0 at the bottom."""
    if n < 2:
        raise ValueError("universal B test needs n >= 2")
    w = np.full(n, 0.5)
    w[0] = 1.0
    w[-1] = 0.0
    return PositionWeights(w)


def multiunit_weights(k: int, n: int) -> PositionWeights:
    _check_kn(k, n)
    return PositionWeights(np.concatenate((np.ones(k), np.zeros(n - k))))


def max_slope_bound(k: int, n: int) -> tuple[float, float]:
    """Bracket for ``sup_q x_k'(q)``.

    For ``k`` in ``{1, n-1}`` the supremum is exactly ``n - 1`` (attained at an
    endpoint).  Otherwise the bracket is
    ``[1/sqrt(2 pi), 1/sqrt(pi)] * (n-1) / sqrt(min(k-1, n-k))``.
    """
    _check_kn(k, n)
    if n < 2 or k in (0, n):
        return (0.0, 0.0)
    if k == 1 or k == n - 1:
        return (float(n - 1), float(n - 1))
    scale = (n - 1) / np.sqrt(min(k - 1, n - k))
    return (scale / np.sqrt(2 * np.pi), scale / np.sqrt(np.pi))
