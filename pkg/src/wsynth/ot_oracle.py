"""Exact optimal-transport distances between discrete measures.

The 1D routines integrate CDF or quantile differences over the merged
support, which is exact for step functions and handles unequal, nonuniform
weights. ``w1_exact_lp`` solves the Kantorovich LP directly and is meant for
small validation instances only.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linprog
from scipy.spatial.distance import cdist

from .measures import EmpiricalMeasure, sorted_cdf

DEFAULT_MAX_ATOMS = 128


@dataclass(frozen=True)
class TransportCost:
    value: float
    order: int

    def __post_init__(self):
        if self.order not in (1, 2):
            raise ValueError("order must be 1 or 2")
        if not self.value >= 0:
            raise ValueError(f"transport cost must be nonnegative, got {self.value}")

    def __float__(self) -> float:
        return self.value


def _check_1d(p: EmpiricalMeasure, q: EmpiricalMeasure) -> None:
    if p.dim != 1 or q.dim != 1:
        raise ValueError(f"1D routine called with dims {p.dim} and {q.dim}")


def _cdf_gaps(p: EmpiricalMeasure, q: EmpiricalMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Interval lengths of the merged support and |F_P - F_Q| on each interval."""
    _check_1d(p, q)
    xp, cp = sorted_cdf(p)
    xq, cq = sorted_cdf(q)
    grid = np.union1d(xp, xq)
    if grid.size < 2:
        return np.zeros(0), np.zeros(0)
    left = grid[:-1]
    ip = np.searchsorted(xp, left, side="right")
    iq = np.searchsorted(xq, left, side="right")
    fp = np.where(ip > 0, cp[np.maximum(ip - 1, 0)], 0.0)
    fq = np.where(iq > 0, cq[np.maximum(iq - 1, 0)], 0.0)
    return np.diff(grid), np.abs(fp - fq)


def w1_exact_1d(p: EmpiricalMeasure, q: EmpiricalMeasure) -> TransportCost:
    dx, gap = _cdf_gaps(p, q)
    return TransportCost(float(np.dot(dx, gap)), 1)


def cdf_l2_sq(p: EmpiricalMeasure, q: EmpiricalMeasure) -> float:
    """Integrated squared CDF difference."""
    dx, gap = _cdf_gaps(p, q)
    return float(np.dot(dx, gap * gap))


def w2_exact_1d(p: EmpiricalMeasure, q: EmpiricalMeasure) -> TransportCost:
    """W2 via the quantile representation; both quantiles are piecewise constant."""
    _check_1d(p, q)
    xp, cp = sorted_cdf(p)
    xq, cq = sorted_cdf(q)
    cp[-1] = cq[-1] = 1.0
    levels = np.union1d(cp, cq)
    levels = levels[(levels > 0) & (levels <= 1.0)]
    lo = np.concatenate([[0.0], levels[:-1]])
    dtau = levels - lo
    mid = lo + 0.5 * dtau
    qa = xp[np.minimum(np.searchsorted(cp, mid, side="left"), xp.size - 1)]
    qb = xq[np.minimum(np.searchsorted(cq, mid, side="left"), xq.size - 1)]
    return TransportCost(float(np.sqrt(np.dot(dtau, (qa - qb) ** 2))), 2)


def w1_exact_lp(
    p: EmpiricalMeasure, q: EmpiricalMeasure, max_atoms: int = DEFAULT_MAX_ATOMS
) -> TransportCost:
    """Exact W1 with Euclidean ground cost by solving the transport LP.

    Validation-only: refuses instances with more than ``max_atoms`` atoms in
    total.
    """
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch {p.dim} vs {q.dim}")
    m, n = p.size, q.size
    if m + n > max_atoms:
        raise ValueError(f"LP oracle limited to {max_atoms} atoms, got {m + n}")
    cost = cdist(p.points, q.points)
    # row sums = p.weights, column sums = q.weights
    a_eq = np.zeros((m + n, m * n))
    for i in range(m):
        a_eq[i, i * n : (i + 1) * n] = 1.0
    for k in range(n):
        a_eq[m + k, k::n] = 1.0
    b_eq = np.concatenate([p.weights, q.weights])
    res = linprog(cost.ravel(), A_eq=a_eq, b_eq=b_eq, bounds=(0, None), method="highs")
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return TransportCost(max(float(res.fun), 0.0), 1)


def w1(p: EmpiricalMeasure, q: EmpiricalMeasure, max_atoms: int = DEFAULT_MAX_ATOMS) -> float:
    """Exact W1, closed form in 1D and LP otherwise."""
    if p.dim != q.dim:
        raise ValueError(f"dimension mismatch {p.dim} vs {q.dim}")
    if p.dim == 1:
        return w1_exact_1d(p, q).value
    return w1_exact_lp(p, q, max_atoms).value
