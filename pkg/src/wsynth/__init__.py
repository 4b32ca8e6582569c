"""Distributional synthetic controls by Wasserstein-1 matching."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:
    __version__ = "0.1.0"

from .estimator import EstimatorConfig, EstimationReport, estimate
from .measures import EmpiricalMeasure, PanelDataset, SimplexWeights, from_samples, weighted_mixture

__all__ = [
    "EmpiricalMeasure",
    "EstimationReport",
    "EstimatorConfig",
    "PanelDataset",
    "SimplexWeights",
    "estimate",
    "from_samples",
    "weighted_mixture",
]
