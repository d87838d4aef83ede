"""Revenue-optimal rank-based auctions via ironing and reserves by rank.

Revenue of position weights ``w`` is ``sum_k (w[k] - w[k+1]) P_k`` where
``P_k`` are the multi-unit revenues, so optimization only needs the points
``(k, P_k)``.  The optimal auction irons ``w`` over the intervals where the
multi-unit revenue curve lies strictly below its concave hull and rejects
ranks whose ironed marginal revenue is negative.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.optimize import linprog

from .alloc import WEIGHT_TOL, PositionWeights, cumulative_weights, is_feasible

MARGINAL_TOL = 1e-12

__all__ = [
    "MultiUnitRevenueCurve",
    "IronedRevenueCurve",
    "RankOperation",
    "InfeasibleWeightsError",
    "concave_hull",
    "upper_envelope_bruteforce",
    "optimal_rank_based",
    "optimal_strict",
    "strict_four_step",
    "revenue_of_weights",
    "apply_iron",
    "apply_reserve",
    "apply_operation",
    "decomposition_plan",
    "decompose_to_weights_sampler",
    "sample_decompositions",
    "operations_to_json",
]


class InfeasibleWeightsError(ValueError):
    pass


@dataclass(frozen=True)
class MultiUnitRevenueCurve:
    """Per-agent multi-unit revenues ``P_0..P_n`` with ``P_0 = P_n = 0``."""

    P: np.ndarray

    def __post_init__(self):
        P = np.array(self.P, dtype=float).ravel()
        if P.size < 2:
            raise ValueError("need P_0..P_n with n >= 1")
        if abs(P[0]) > 1e-12 or abs(P[-1]) > 1e-12:
            raise ValueError("multi-unit revenue curve must vanish at k = 0 and k = n")
        if np.any(P < -1e-12) or np.any(np.isnan(P)):
            raise ValueError("multi-unit revenues must be non-negative")
        P[0] = P[-1] = 0.0
        P.setflags(write=False)
        object.__setattr__(self, "P", P)

    @property
    def n(self) -> int:
        return self.P.size - 1

    @property
    def marginal(self) -> np.ndarray:
        """Left slopes ``m[k] = P[k] - P[k-1]``, ``k = 1..n`` (0-based array)."""
        return np.diff(self.P)


@dataclass(frozen=True)
class IronedRevenueCurve:
    Pbar: np.ndarray
    intervals: tuple[tuple[int, int], ...]

    @property
    def n(self) -> int:
        return self.Pbar.size - 1

    @property
    def marginal(self) -> np.ndarray:
        """Ironed marginal revenues ``Pbar[k] - Pbar[k-1]`` for ``k = 1..n``."""
        return np.diff(self.Pbar)


def _as_curve(P) -> MultiUnitRevenueCurve:
    return P if isinstance(P, MultiUnitRevenueCurve) else MultiUnitRevenueCurve(P)


def _upper_hull_vertices(y: np.ndarray) -> list[int]:
    """Monotone chain over ``(k, y[k])``; collinear points are kept."""
    hull: list[int] = []
    for k in range(y.size):
        while len(hull) >= 2:
            i, j = hull[-2], hull[-1]
            # drop j if it lies strictly below the chord from i to k
            cross = (j - i) * (y[k] - y[i]) - (y[j] - y[i]) * (k - i)
            if cross > 0:
                hull.pop()
            else:
                break
        hull.append(k)
    return hull


def _envelope(y: np.ndarray) -> np.ndarray:
    verts = _upper_hull_vertices(y)
    return np.interp(np.arange(y.size), verts, y[verts])


def concave_hull(P) -> IronedRevenueCurve:
    """Smallest concave majorant of the multi-unit revenue curve.

    ``intervals`` are maximal ``[a, b]`` with ``Pbar > P`` strictly at every
    interior index; stretches where ``P`` is collinear with the hull are not
    reported as ironed.
    """
    curve = _as_curve(P)
    y = curve.P
    Pbar = np.maximum(_envelope(y), y)
    strict = Pbar > y + 1e-15 * (1.0 + np.abs(y))
    intervals = []
    k = 1
    while k < y.size - 1:
        if strict[k]:
            a = k - 1
            while strict[k]:
                k += 1
            intervals.append((a, k))
        else:
            k += 1
    Pbar.setflags(write=False)
    return IronedRevenueCurve(Pbar, tuple(intervals))


def upper_envelope_bruteforce(y: Sequence[float]) -> np.ndarray:
    """Concave majorant as the max over all chords through pairs of points.

    O(n^3); used as an independent check of :func:`concave_hull`.
    """
    y = np.asarray(y, dtype=float)
    n = y.size
    out = y.copy()
    for i in range(n):
        for j in range(i + 2, n):
            for k in range(i + 1, j):
                out[k] = max(out[k], y[i] + (y[j] - y[i]) * (k - i) / (j - i))
    return out


def revenue_of_weights(w: PositionWeights | Sequence[float], P) -> float:
    """Per-agent revenue ``sum_k (w[k] - w[k+1]) P_k``."""
    w = np.asarray(w.w if isinstance(w, PositionWeights) else w, dtype=float)
    P = np.asarray(P.P if isinstance(P, MultiUnitRevenueCurve) else P, dtype=float)
    if P.size != w.size + 1:
        raise ValueError(f"need {w.size + 1} revenues for {w.size} positions, got {P.size}")
    wbar = w - np.append(w[1:], 0.0)
    return float(np.dot(wbar, P[1:]))


def apply_iron(w: PositionWeights, lo: int, hi: int) -> PositionWeights:
    """Average positions ``lo..hi`` (1-based, inclusive)."""
    if not 1 <= lo <= hi <= w.n:
        raise ValueError(f"iron interval [{lo}, {hi}] outside 1..{w.n}")
    out = w.w.copy()
    out[lo - 1 : hi] = out[lo - 1 : hi].mean()
    return PositionWeights(out)


def apply_reserve(w: PositionWeights, k: int) -> PositionWeights:
    """Reject every rank below ``k``: positions ``k+1..n`` get weight 0."""
    if not 0 <= k <= w.n:
        raise ValueError(f"rank reserve {k} outside 0..{w.n}")
    out = w.w.copy()
    out[k:] = 0.0
    return PositionWeights(out)


def optimal_rank_based(env: PositionWeights, P) -> PositionWeights:
    """Revenue-optimal weights feasible for ``env``.

    Irons ``env`` on the ironed intervals of the revenue curve, then zeroes
    positions whose ironed marginal revenue is negative.
    """
    curve = _as_curve(P)
    if curve.n != env.n:
        raise ValueError(f"revenue curve has n={curve.n}, environment has n={env.n}")
    ironed = concave_hull(curve)
    w = env.w.copy()
    for a, b in ironed.intervals:
        w[a:b] = w[a:b].mean()  # positions a+1..b
    w[ironed.marginal < -MARGINAL_TOL] = 0.0
    return PositionWeights(w)


def _iron_monotone(y: np.ndarray) -> np.ndarray:
    """Average ``y`` over the intervals that make it non-increasing (concave hull of prefix sums)."""
    Y = np.concatenate(([0.0], np.cumsum(y)))
    return np.diff(_envelope(Y))


def strict_four_step(env: PositionWeights, epsw: PositionWeights, P) -> np.ndarray:
    """The literal four-step construction for strictly monotone weights.

    Subtract ``epsw``, iron the remainder to be monotone, iron on the revenue
    curve's intervals, add ``epsw`` back.  The result is returned as a raw
    array because it need not be feasible for ``env`` when ``env - epsw`` is
    not already monotone; :func:`optimal_strict` is the exact optimizer.
    """
    curve = _as_curve(P)
    y = env.w - epsw.w
    y = _iron_monotone(y)
    for a, b in concave_hull(curve).intervals:
        y[a:b] = y[a:b].mean()
    return y + epsw.w


def optimal_strict(env: PositionWeights, epsw: PositionWeights, P) -> PositionWeights:
    """Revenue-optimal weights ``w_hat`` feasible for ``env`` whose consecutive
    differences are at least those of ``epsw``.

    Solved as a linear program in the marginal weights
    ``d[k] = w_hat[k] - w_hat[k+1] >= epsw[k] - epsw[k+1]`` subject to the
    prefix-sum constraints of ``env``.  When ``env - epsw`` is monotone this
    coincides with :func:`strict_four_step`.
    """
    curve = _as_curve(P)
    n = env.n
    if curve.n != n or epsw.n != n:
        raise ValueError("env, epsw and P must agree on n")
    if not is_feasible(epsw, env):
        raise InfeasibleWeightsError("strictness weights are not feasible for the environment")
    dmin = epsw.w - np.append(epsw.w[1:], 0.0)
    # prefix sum W_hat[j] = sum_k d[k] * min(k, j)
    k = np.arange(1, n + 1)
    A = np.minimum.outer(k, k).astype(float)
    W = cumulative_weights(env)[1:]
    res = linprog(
        -curve.P[1:],
        A_ub=A,
        b_ub=W + WEIGHT_TOL,
        bounds=list(zip(dmin, [None] * n)),
        method="highs",
    )
    if res.status != 0:
        raise InfeasibleWeightsError(f"strict optimization failed: {res.message}")
    d = np.maximum(res.x, dmin)
    w = np.cumsum(d[::-1])[::-1]
    w = np.minimum(w, 1.0)
    return PositionWeights(w)


@dataclass(frozen=True)
class RankOperation:
    """``iron`` over positions ``lo..hi`` or ``reserve`` keeping the top ``k`` ranks."""

    kind: str
    lo: int = 0
    hi: int = 0
    k: int = 0

    def __post_init__(self):
        if self.kind == "iron":
            if not 1 <= self.lo <= self.hi:
                raise ValueError(f"bad iron interval [{self.lo}, {self.hi}]")
        elif self.kind == "reserve":
            if self.k < 0:
                raise ValueError(f"bad rank reserve {self.k}")
        else:
            raise ValueError(f"unknown rank operation {self.kind!r}")

    @classmethod
    def iron(cls, lo: int, hi: int) -> "RankOperation":
        return cls("iron", lo=lo, hi=hi)

    @classmethod
    def reserve(cls, k: int) -> "RankOperation":
        return cls("reserve", k=k)

    def as_dict(self) -> dict:
        if self.kind == "iron":
            return {"op": "iron", "lo": self.lo, "hi": self.hi}
        return {"op": "reserve", "k": self.k}

    def matrix(self, n: int) -> np.ndarray:
        M = np.eye(n)
        if self.kind == "iron":
            s = slice(self.lo - 1, self.hi)
            M[s, s] = 1.0 / (self.hi - self.lo + 1)
        else:
            M[self.k :, self.k :] = 0.0
        return M


def apply_operation(w: PositionWeights, op: RankOperation) -> PositionWeights:
    if op.kind == "iron":
        return apply_iron(w, op.lo, op.hi)
    return apply_reserve(w, op.k)


def _matched_prefix(y: np.ndarray, T: np.ndarray, tol: float) -> int:
    Y = np.concatenate(([0.0], np.cumsum(y)))
    off = np.abs(Y - T) > tol
    return int(np.argmax(off)) - 1 if off.any() else y.size


def decomposition_plan(
    env: PositionWeights, target: PositionWeights, tol: float = 1e-10
) -> list[tuple[tuple[RankOperation, float], tuple[RankOperation, float]]]:
    """Randomized steps whose composition induces ``target`` in expectation.

    Each step is a pair of ``(operation, probability)`` alternatives.  The
    plan is computed on expected weights; one step fixes at least one more
    prefix sum, so there are at most ``n`` steps.
    """
    if target.n != env.n:
        raise ValueError("env and target differ in n")
    if not is_feasible(target, env):
        raise InfeasibleWeightsError("target weights are not feasible for the environment")
    n = env.n
    T = cumulative_weights(target)
    y = env.w.astype(float).copy()
    plan = []
    i = _matched_prefix(y, T, tol)
    while i < n:
        t = target.w[i]  # target weight of position i+1
        Y = np.concatenate(([0.0], np.cumsum(y)))
        j = np.arange(i + 1, n + 1)
        avg = (Y[j] - Y[i]) / (j - i)
        below = np.flatnonzero(avg < t - tol)
        if below.size:
            ip = int(j[below[0]]) - 1  # last index whose average still reaches t
            A, B = avg[ip - i - 1], avg[ip - i]
            alpha = float(np.clip((t - B) / (A - B), 0.0, 1.0))
            first, second = RankOperation.iron(i + 1, ip), RankOperation.iron(i + 1, ip + 1)
        else:
            A = avg[-1]
            alpha = float(np.clip(t / A, 0.0, 1.0)) if A > 0 else 0.0
            first, second = RankOperation.iron(i + 1, n), RankOperation.reserve(i)
        plan.append(((first, alpha), (second, 1.0 - alpha)))
        y = alpha * (first.matrix(n) @ y) + (1.0 - alpha) * (second.matrix(n) @ y)
        i_next = _matched_prefix(y, T, tol)
        assert i_next > i, "decomposition failed to extend the matched prefix"
        i = i_next
    return plan


def decompose_to_weights_sampler(
    env: PositionWeights, target: PositionWeights, rng: np.random.Generator, plan=None
) -> tuple[PositionWeights, list[tuple[RankOperation, float]]]:
    """Sample one run of the randomized decomposition of ``target`` from ``env``.

    Returns the realized weights and the log of ``(operation, probability)``
    actually applied.  Averaged over ``rng`` the realized weights equal
    ``target``.  Pass ``plan`` from :func:`decomposition_plan` to reuse it
    across many draws.
    """
    if plan is None:
        plan = decomposition_plan(env, target)
    w = env
    log = []
    for (first, p), (second, q) in plan:
        if p >= 1.0:
            op, prob = first, 1.0
        elif q >= 1.0:
            op, prob = second, 1.0
        else:
            op, prob = (first, p) if rng.random() < p else (second, q)
        if op.kind == "iron" and op.lo == op.hi:
            continue  # single-position ironing is the identity
        w = apply_operation(w, op)
        log.append((op, prob))
    return w, log


def sample_decompositions(
    env: PositionWeights, target: PositionWeights, size: int, rng: np.random.Generator
) -> np.ndarray:
    """Realized weights of ``size`` independent decomposition runs, one per row.

    Same law as repeated :func:`decompose_to_weights_sampler` calls, but each
    step is applied to the whole batch at once.
    """
    plan = decomposition_plan(env, target)
    n = env.n
    W = np.tile(env.w.astype(float), (size, 1))
    for (first, p), (second, _) in plan:
        pick = rng.random(size) < p
        W = np.where(pick[:, None], W @ first.matrix(n).T, W @ second.matrix(n).T)
    return W


def operations_to_json(log: Sequence[tuple[RankOperation, float]]) -> str:
    return json.dumps([[op.as_dict(), prob] for op, prob in log])
