"""Discrete probability measures, simplex weights and panels of measures."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Mapping, Sequence

import numpy as np

MASS_TOL = 1e-9


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class EmpiricalMeasure:
    """Finite weighted point cloud in R^d.

    ``points`` has shape (M, d) and ``weights`` shape (M,). Atoms are kept in
    construction order and duplicates are allowed.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        w = np.asarray(self.weights, dtype=float).ravel()
        if pts.ndim != 2 or pts.shape[0] == 0 or pts.shape[1] == 0:
            raise ValueError("measure needs at least one atom of positive dimension")
        if w.shape[0] != pts.shape[0]:
            raise ValueError(f"{pts.shape[0]} points but {w.shape[0]} weights")
        if not np.all(np.isfinite(pts)):
            raise ValueError("atoms must be finite")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        if abs(w.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"weights sum to {w.sum()!r}, expected 1")
        object.__setattr__(self, "points", _frozen(pts))
        object.__setattr__(self, "weights", _frozen(w))

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def size(self) -> int:
        return self.points.shape[0]

    def __len__(self) -> int:
        return self.size

    def mean(self) -> np.ndarray:
        return self.weights @ self.points

    def values(self) -> np.ndarray:
        """1D atom locations as a flat array."""
        _require_1d(self)
        return self.points[:, 0]

    def same_cell(self, other: "EmpiricalMeasure") -> bool:
        """Atom-for-atom equality (not distributional equality)."""
        return (
            self.points.shape == other.points.shape
            and np.array_equal(self.points, other.points)
            and np.array_equal(self.weights, other.weights)
        )

    def shifted(self, c) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.points + np.asarray(c, dtype=float), self.weights)

    def scaled(self, s: float) -> "EmpiricalMeasure":
        return EmpiricalMeasure(self.points * float(s), self.weights)


@dataclass(frozen=True, eq=False)
class SimplexWeights:
    """Donor weight vector on the probability simplex."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).ravel()
        if v.size == 0:
            raise ValueError("empty weight vector")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise ValueError("simplex weights must be finite and nonnegative")
        if abs(v.sum() - 1.0) > MASS_TOL:
            raise ValueError(f"simplex weights sum to {v.sum()!r}, expected 1")
        object.__setattr__(self, "values", _frozen(v))

    @classmethod
    def uniform(cls, j: int) -> "SimplexWeights":
        return cls(np.full(j, 1.0 / j))

    @classmethod
    def vertex(cls, j: int, k: int) -> "SimplexWeights":
        v = np.zeros(j)
        v[k] = 1.0
        return cls(v)

    def __len__(self) -> int:
        return self.values.size

    def __getitem__(self, k):
        return self.values[k]

    def tolist(self) -> list[float]:
        return self.values.tolist()


@dataclass(frozen=True, eq=False)
class PanelDataset:
    """Units x periods grid of measures. Unit 0 is the treated unit.

    ``cutoff`` is the number of pre-treatment periods (T0), so periods
    ``0 .. cutoff-1`` are pre-treatment.
    """

    units: tuple
    periods: tuple
    cutoff: int
    cells: Mapping[tuple, EmpiricalMeasure] = field(repr=False)

    def __post_init__(self):
        units = tuple(self.units)
        periods = tuple(self.periods)
        object.__setattr__(self, "units", units)
        object.__setattr__(self, "periods", periods)
        if len(set(units)) != len(units) or len(set(periods)) != len(periods):
            raise ValueError("unit and period labels must be unique")
        if len(units) < 2:
            raise ValueError("panel needs a treated unit and at least one donor")
        if not 1 <= self.cutoff < len(periods):
            raise ValueError(
                f"cutoff must satisfy 1 <= T0 < {len(periods)}, got {self.cutoff}"
            )
        dims = set()
        for u in units:
            for p in periods:
                m = self.cells.get((u, p))
                if m is None:
                    raise ValueError(f"missing cell for unit {u!r}, period {p!r}")
                dims.add(m.dim)
        if len(dims) != 1:
            raise ValueError(f"cells have mixed dimensions {sorted(dims)}")
        object.__setattr__(self, "cells", dict(self.cells))

    @property
    def dim(self) -> int:
        return self.cell(self.units[0], self.periods[0]).dim

    @property
    def n_donors(self) -> int:
        return len(self.units) - 1

    @property
    def treated(self) -> Hashable:
        return self.units[0]

    @property
    def donors(self) -> tuple:
        return self.units[1:]

    @property
    def pre_periods(self) -> tuple:
        return self.periods[: self.cutoff]

    @property
    def post_periods(self) -> tuple:
        return self.periods[self.cutoff :]

    def cell(self, unit, period) -> EmpiricalMeasure:
        try:
            return self.cells[(unit, period)]
        except KeyError:
            raise KeyError(f"no cell for unit {unit!r}, period {period!r}") from None

    def donor_cells(self, period) -> list[EmpiricalMeasure]:
        return [self.cell(u, period) for u in self.donors]

    def relabel(self, treated, donors: Sequence | None = None) -> "PanelDataset":
        """Same data with ``treated`` moved to index 0.

        ``donors`` defaults to every other unit in original order.
        """
        if treated not in self.units:
            raise KeyError(f"unknown unit {treated!r}")
        if donors is None:
            donors = [u for u in self.units if u != treated]
        units = (treated, *donors)
        cells = {(u, p): self.cells[(u, p)] for u in units for p in self.periods}
        return PanelDataset(units, self.periods, self.cutoff, cells)


def _require_1d(m: EmpiricalMeasure) -> None:
    if m.dim != 1:
        raise ValueError(f"operation needs a 1D measure, got dim={m.dim}")


def from_samples(rows) -> EmpiricalMeasure:
    """Uniform empirical measure on the given rows."""
    if isinstance(rows, np.ndarray):
        arr = rows.astype(float)
    else:
        rows = list(rows)
        if not rows:
            raise ValueError("cannot build a measure from zero samples")
        lengths = {np.size(r) for r in rows}
        if len(lengths) != 1:
            raise ValueError(f"ragged sample dimensions {sorted(lengths)}")
        arr = np.array([np.atleast_1d(np.asarray(r, dtype=float)) for r in rows])
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.shape[0] == 0:
        raise ValueError("cannot build a measure from zero samples")
    m = arr.shape[0]
    return EmpiricalMeasure(arr, np.full(m, 1.0 / m))


def _check_donors(donors: Sequence[EmpiricalMeasure], lam: SimplexWeights) -> None:
    if not donors:
        raise ValueError("need at least one donor")
    if len(donors) != len(lam):
        raise ValueError(f"{len(donors)} donors but {len(lam)} weights")
    dims = {d.dim for d in donors}
    if len(dims) != 1:
        raise ValueError(f"donors have mixed dimensions {sorted(dims)}")


def weighted_mixture(donors: Sequence[EmpiricalMeasure], lam: SimplexWeights) -> EmpiricalMeasure:
    """Exact mixture sum_j lam_j * donor_j; zero-weight donors drop out."""
    _check_donors(donors, lam)
    pts, ws = [], []
    for d, l in zip(donors, lam.values):
        if l > 0:
            pts.append(d.points)
            ws.append(l * d.weights)
    w = np.concatenate(ws)
    return EmpiricalMeasure(np.vstack(pts), w / w.sum())


def sample_mixture(
    donors: Sequence[EmpiricalMeasure], lam: SimplexWeights, n: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw n points: donor j with prob lam_j, then an atom of that donor by its weight."""
    _check_donors(donors, lam)
    if n < 1:
        raise ValueError("sample size must be >= 1")
    which = rng.choice(len(donors), size=n, p=lam.values)
    out = np.empty((n, donors[0].dim))
    for j, d in enumerate(donors):
        idx = np.flatnonzero(which == j)
        if idx.size:
            out[idx] = d.points[_draw_atoms(d, idx.size, rng)]
    return out


def _draw_atoms(m: EmpiricalMeasure, n: int, rng: np.random.Generator) -> np.ndarray:
    if _is_uniform(m.weights):
        return rng.integers(0, m.size, size=n)
    return rng.choice(m.size, size=n, p=m.weights)


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.all(w == w[0]))


def sorted_cdf(m: EmpiricalMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Sorted atom values and the CDF evaluated at each of them."""
    _require_1d(m)
    order = np.argsort(m.points[:, 0], kind="stable")
    return m.points[order, 0], np.cumsum(m.weights[order])


def cdf_eval(m: EmpiricalMeasure, x) -> np.ndarray | float:
    """Right-continuous CDF F(x) = sum of weights of atoms <= x."""
    xs, cum = sorted_cdf(m)
    idx = np.searchsorted(xs, x, side="right")
    out = np.where(idx > 0, cum[np.maximum(idx - 1, 0)], 0.0)
    out = np.minimum(out, 1.0)
    return float(out) if np.ndim(x) == 0 else out


def quantile_eval(m: EmpiricalMeasure, tau) -> np.ndarray | float:
    """Generalized inverse Q(tau) = inf{x : F(x) >= tau}, tau in (0, 1)."""
    t = np.asarray(tau, dtype=float)
    if np.any((t <= 0) | (t >= 1)) or not np.all(np.isfinite(t)):
        raise ValueError("quantile level must lie strictly inside (0, 1)")
    xs, cum = sorted_cdf(m)
    # guard against cumsum roundoff landing just below an exact level
    idx = np.searchsorted(cum, t - 1e-12, side="left")
    out = xs[np.minimum(idx, xs.size - 1)]
    return float(out) if np.ndim(tau) == 0 else out
