"""Euclidean comparison estimators: CDF-L2 and W2 quantile averaging.

Both reduce to a convex quadratic on the simplex,
``lam' A lam - 2 b' lam + c``, assembled exactly on a finite grid.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .measures import EmpiricalMeasure, SimplexWeights, quantile_eval, sorted_cdf

DEFAULT_GRID = 512
N_RESTARTS = 10


@dataclass(frozen=True, eq=False)
class QuadraticSimplexProblem:
    gram: np.ndarray
    linear: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.gram, dtype=float)
        b = np.asarray(self.linear, dtype=float).ravel()
        if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] != b.size:
            raise ValueError("gram must be square and match the linear term")
        scale = max(1.0, float(np.abs(a).max()))
        if np.abs(a - a.T).max() > 1e-12 * scale:
            raise ValueError("gram matrix is not symmetric")
        a = 0.5 * (a + a.T)
        if np.linalg.eigvalsh(a).min() < -1e-9 * scale:
            raise ValueError("gram matrix is not positive semidefinite")
        object.__setattr__(self, "gram", a)
        object.__setattr__(self, "linear", b)

    @property
    def size(self) -> int:
        return self.linear.size

    def objective(self, lam) -> np.ndarray | float:
        lam = np.asarray(lam, dtype=float)
        return np.einsum("...i,ij,...j->...", lam, self.gram, lam) - 2 * lam @ self.linear + self.const

    def gradient(self, lam) -> np.ndarray:
        return 2.0 * (np.asarray(lam) @ self.gram - self.linear)

    def projected_gradient_norm(self, lam) -> float:
        """Norm of the gradient mapping ||(lam - P(lam - g/L)) * L||."""
        lam = np.asarray(lam, dtype=float)
        lip = self._lipschitz()
        step = project_simplex(lam - self.gradient(lam) / lip)
        return float(np.linalg.norm(lip * (lam - step)))

    def _lipschitz(self) -> float:
        return max(2.0 * float(np.linalg.eigvalsh(self.gram).max()), 1e-12)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection of each row of v onto the probability simplex."""
    v = np.asarray(v, dtype=float)
    flat = v.reshape(-1, v.shape[-1])
    u = -np.sort(-flat, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, flat.shape[1] + 1)
    cond = u - css / k > 0
    rho = flat.shape[1] - 1 - np.argmax(cond[:, ::-1], axis=1)
    theta = css[np.arange(flat.shape[0]), rho] / (rho + 1)
    return np.maximum(flat - theta[:, None], 0.0).reshape(v.shape)


def solve_simplex_qp(
    prob: QuadraticSimplexProblem,
    rng: np.random.Generator | None = None,
    restarts: int = N_RESTARTS,
    max_iter: int = 5000,
    tol: float = 1e-13,
    kkt_tol: float = 1e-10,
    check_every: int = 25,
) -> SimplexWeights:
    """Accelerated projected gradient from several starts, then a face polish.

    All starts run together as rows of one matrix. The best end point's support
    is used to solve the equality-constrained problem on that face exactly;
    the polished point is kept only when it stays feasible and does not
    increase the objective.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    j = prob.size
    starts = np.vstack([np.full(j, 1.0 / j), rng.dirichlet(np.ones(j), size=max(restarts - 1, 0))])
    lip = prob._lipschitz()
    x = starts.copy()
    y = x.copy()
    t = 1.0
    best = x[0]
    for it in range(1, max_iter + 1):
        g = 2.0 * (y @ prob.gram - prob.linear)
        x_new = project_simplex(y - g / lip)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        y = x_new + ((t - 1) / t_new) * (x_new - x)
        moved = np.abs(x_new - x).max()
        x, t = x_new, t_new
        if it % check_every == 0 or moved < tol or it == max_iter:
            best = _polish(prob, x[int(np.argmin(prob.objective(x)))])
            if moved < tol or prob.projected_gradient_norm(best) < kkt_tol:
                break
    return SimplexWeights(best / best.sum())


def _polish(prob: QuadraticSimplexProblem, lam: np.ndarray) -> np.ndarray:
    support = np.flatnonzero(lam > 1e-9)
    k = support.size
    a = prob.gram[np.ix_(support, support)]
    kkt = np.zeros((k + 1, k + 1))
    kkt[:k, :k] = 2 * a
    kkt[:k, k] = 1.0
    kkt[k, :k] = 1.0
    rhs = np.concatenate([2 * prob.linear[support], [1.0]])
    sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0][:k]
    if np.any(sol < 0) or abs(sol.sum() - 1) > 1e-9:
        return lam
    cand = np.zeros_like(lam)
    cand[support] = sol
    if prob.objective(cand) <= prob.objective(lam) + 1e-15:
        return cand
    return lam


def _require_1d(*ms: EmpiricalMeasure) -> None:
    for m in ms:
        if m.dim != 1:
            raise ValueError(
                "Euclidean benchmarks are defined for univariate outcomes only "
                f"(got dim={m.dim})"
            )


def cdf_l2_problem(treated: EmpiricalMeasure, donors: Sequence[EmpiricalMeasure]):
    """Exact CDF-L2 quadratic on the merged atom grid."""
    _require_1d(treated, *donors)
    grid = np.unique(np.concatenate([treated.values()] + [d.values() for d in donors]))
    if grid.size < 2:
        j = len(donors)
        return QuadraticSimplexProblem(np.zeros((j, j)), np.zeros(j), 0.0)
    left, dx = grid[:-1], np.diff(grid)

    def steps(m):
        xs, cum = sorted_cdf(m)
        idx = np.searchsorted(xs, left, side="right")
        return np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)

    f1 = steps(treated)
    fj = np.array([steps(d) for d in donors])
    a = (fj * dx) @ fj.T
    b = (fj * dx) @ f1
    return QuadraticSimplexProblem(a, b, float((f1 * dx) @ f1))


def quantile_grid(k: int) -> np.ndarray:
    return (np.arange(1, k + 1) - 0.5) / k


def quantile_w2_problem(treated, donors, grid_size: int = DEFAULT_GRID):
    _require_1d(treated, *donors)
    if grid_size < 16:
        raise ValueError("quantile grid needs at least 16 levels")
    tau = quantile_grid(grid_size)
    q1 = quantile_eval(treated, tau)
    qj = np.array([quantile_eval(d, tau) for d in donors])
    return QuadraticSimplexProblem(qj @ qj.T / grid_size, qj @ q1 / grid_size, float(q1 @ q1) / grid_size)


def cdf_l2_estimate(treated, donors, rng=None) -> SimplexWeights:
    return solve_simplex_qp(cdf_l2_problem(treated, donors), rng)


def quantile_w2_estimate(treated, donors, grid_size: int = DEFAULT_GRID, rng=None) -> SimplexWeights:
    return solve_simplex_qp(quantile_w2_problem(treated, donors, grid_size), rng)


def quantile_average_synthesis(
    donors: Sequence[EmpiricalMeasure], lam: SimplexWeights, grid_size: int = DEFAULT_GRID
) -> EmpiricalMeasure:
    """Uniform measure on the averaged quantiles sum_j lam_j Q_j(tau_k)."""
    _require_1d(*donors)
    if len(donors) != len(lam):
        raise ValueError(f"{len(donors)} donors but {len(lam)} weights")
    tau = quantile_grid(grid_size)
    q = np.array([quantile_eval(d, tau) for d in donors])
    atoms = lam.values @ q
    return EmpiricalMeasure(atoms[:, None], np.full(grid_size, 1.0 / grid_size))
