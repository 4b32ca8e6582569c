"""Uniform entry point for fitting donor weights with any supported method."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import benchmarks
from .estimator import EstimationReport, EstimatorConfig, aggregate, estimate, period_rng
from .measures import EmpiricalMeasure, PanelDataset, SimplexWeights, weighted_mixture

METHODS = ("wgan", "cdfl2", "w2quantile")


@dataclass
class Fit:
    method: str
    per_period: list[SimplexWeights]
    aggregated: SimplexWeights
    report: EstimationReport | None = None


def fit(
    panel: PanelDataset,
    method: str,
    config: EstimatorConfig | None = None,
    grid_size: int = benchmarks.DEFAULT_GRID,
    jobs: int = 1,
) -> Fit:
    """Per-period weights over the pre-treatment window, averaged as in the WGAN path."""
    config = config or EstimatorConfig()
    if method == "wgan":
        rep = estimate(panel, config, jobs=jobs)
        return Fit(method, rep.per_period_weights, rep.aggregated, rep)
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    per = []
    for k, p in enumerate(panel.pre_periods):
        treated, donors = panel.cell(panel.treated, p), panel.donor_cells(p)
        rng = period_rng(config.seed, k)
        if method == "cdfl2":
            per.append(benchmarks.cdf_l2_estimate(treated, donors, rng=rng))
        else:
            per.append(benchmarks.quantile_w2_estimate(treated, donors, grid_size, rng=rng))
    return Fit(method, per, aggregate(per, config.temporal_weights))


def synthesize(panel: PanelDataset, method: str, lam: SimplexWeights, period,
               grid_size: int = benchmarks.DEFAULT_GRID) -> EmpiricalMeasure:
    """The method's own synthetic object: quantile average for w2quantile, mixture otherwise."""
    donors = panel.donor_cells(period)
    if method == "w2quantile":
        return benchmarks.quantile_average_synthesis(donors, lam, grid_size)
    return weighted_mixture(donors, lam)


def weight_rmse(est, truth) -> float:
    e = np.asarray(getattr(est, "values", est)) - np.asarray(getattr(truth, "values", truth))
    return float(np.sqrt(np.mean(e * e)))
