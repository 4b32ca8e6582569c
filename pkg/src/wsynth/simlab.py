"""Data-generating processes for the four simulation designs and the Monte Carlo harness."""

from __future__ import annotations

import csv
import dataclasses
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import methods as fitting
from .estimator import EstimatorConfig
from .measures import EmpiricalMeasure, PanelDataset, SimplexWeights, from_samples, weighted_mixture
from .ot_oracle import w1_exact_1d, w1_exact_lp, w2_exact_1d

SCENARIOS = ("contamination", "support_gap", "bimodal_poisson", "multivariate")
METHODS = ("wgan", "cdfl2", "w2quantile")
DEFAULT_LAMBDA = (0.15, 0.25, 0.35, 0.25)
POISSON_TREATED = (5.0, 20.0)
POISSON_DONORS = (2.0, 12.0, 18.0, 25.0)
CORNER = 3.0
RHO = 0.5
OUTLIER_SHIFT = 8.0


@dataclass(frozen=True)
class DgpSpec:
    scenario: str = "contamination"
    epsilon: float = 0.0
    mu_out: float | None = None
    sigma_out: float = 10.0
    gamma: float = 0.0
    n_micro: int = 300
    t0: int = 3
    t_post: int = 1
    j_donors: int = 4
    lambda_true: tuple[float, ...] = DEFAULT_LAMBDA
    sigma_noise: float = 1.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "lambda_true", tuple(float(x) for x in self.lambda_true))
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}; choose from {SCENARIOS}")
        if not 0 <= self.epsilon <= 1:
            raise ValueError("epsilon must lie in [0, 1]")
        if not 0 <= self.gamma < 1:
            raise ValueError("gamma must lie in [0, 1)")
        if self.n_micro < 2:
            raise ValueError("n_micro must be >= 2")
        if self.t0 < 1 or self.t_post < 1:
            raise ValueError("need at least one pre and one post period")
        if self.sigma_noise < 0 or self.sigma_out < 0:
            raise ValueError("noise scales must be nonnegative")
        lam = np.asarray(self.lambda_true)
        if np.any(lam < 0) or abs(lam.sum() - 1) > 1e-9:
            raise ValueError("lambda_true must lie on the simplex")
        fixed_j = {"bimodal_poisson": len(POISSON_DONORS), "multivariate": 4}
        j = fixed_j.get(self.scenario, self.j_donors)
        if j != self.j_donors:
            raise ValueError(f"scenario {self.scenario} has exactly {j} donors")
        if self.scenario in ("contamination", "multivariate") and lam.size != j:
            raise ValueError(f"lambda_true has {lam.size} entries for {j} donors")

    @property
    def n_periods(self) -> int:
        return self.t0 + self.t_post

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["lambda_true"] = list(self.lambda_true)
        return d


def largest_remainder(weights, n: int) -> np.ndarray:
    """Integer counts summing to n, proportional to weights."""
    raw = np.asarray(weights, dtype=float) * n
    counts = np.floor(raw).astype(int)
    short = n - counts.sum()
    if short:
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def contamination_count(epsilon: float, n: int) -> int:
    """Round-half-up of epsilon * n."""
    return int(np.floor(epsilon * n + 0.5 + 1e-9))


def _panel(cells: dict, n_units: int, spec: DgpSpec) -> PanelDataset:
    units = ["treated"] + [f"donor{j + 1}" for j in range(n_units - 1)]
    periods = [f"t{t + 1}" for t in range(spec.n_periods)]
    return PanelDataset(
        tuple(units),
        tuple(periods),
        spec.t0,
        {(units[u], periods[t]): m for (u, t), m in cells.items()},
    )


def _check(spec: DgpSpec, scenario: str) -> None:
    if spec.scenario != scenario:
        raise ValueError(f"spec is for scenario {spec.scenario!r}, not {scenario!r}")


def _rng(spec: DgpSpec, rng):
    return np.random.default_rng(spec.seed) if rng is None else rng


def dgp_contamination(spec: DgpSpec, rng=None, return_clean: bool = False):
    """Factor model donors, treated = exact lambda_true mixture plus outliers.

    Every random draw is made regardless of epsilon, so two specs that differ
    only in epsilon share the clean data, the outlier values and the order in
    which treated atoms get replaced.
    """
    _check(spec, "contamination")
    rng = _rng(spec, rng)
    j, n = spec.j_donors, spec.n_micro
    loadings = rng.uniform(0.0, 1.0, size=j)
    counts = largest_remainder(spec.lambda_true, n)
    k_out = contamination_count(spec.epsilon, n)
    cells, clean = {}, []
    for t in range(spec.n_periods):
        alpha = 0.1 * (t + 1)
        factor = rng.normal()
        locs = alpha + loadings * factor
        for d in range(j):
            cells[(d + 1, t)] = from_samples(locs[d] + spec.sigma_noise * rng.normal(size=n))
        y = np.concatenate(
            [locs[d] + spec.sigma_noise * rng.normal(size=c) for d, c in enumerate(counts)]
        )
        clean.append(from_samples(y))
        mu_out = spec.mu_out
        if mu_out is None:
            mu_out = float(np.dot(spec.lambda_true, locs)) + OUTLIER_SHIFT
        order = rng.permutation(n)
        outliers = mu_out + spec.sigma_out * rng.normal(size=n)
        y = y.copy()
        y[order[:k_out]] = outliers[:k_out]
        cells[(0, t)] = from_samples(y)
    panel = _panel(cells, j + 1, spec)
    lam = SimplexWeights(spec.lambda_true)
    if return_clean:
        return panel, lam, clean
    return panel, lam


def dgp_support_gap(spec: DgpSpec, rng=None) -> PanelDataset:
    """Treated atoms 0.5*tanh(Z) in (-0.5, 0.5); donors sign(Z)*max(|Z|, gamma)."""
    _check(spec, "support_gap")
    rng = _rng(spec, rng)
    n = spec.n_micro
    cells = {}
    for t in range(spec.n_periods):
        cells[(0, t)] = from_samples(0.5 * np.tanh(rng.normal(size=n)))
        for d in range(spec.j_donors):
            z = rng.normal(size=n)
            cells[(d + 1, t)] = from_samples(np.sign(z) * np.maximum(np.abs(z), spec.gamma))
    return _panel(cells, spec.j_donors + 1, spec)


def poisson_inversion(rate: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Poisson draws by inverting the CDF with a sequential table search."""
    u = rng.random(size)
    kmax = int(rate + 20.0 * np.sqrt(rate) + 30)
    pmf = np.empty(kmax + 1)
    pmf[0] = np.exp(-rate)
    for k in range(1, kmax + 1):
        pmf[k] = pmf[k - 1] * rate / k
    cdf = np.cumsum(pmf)
    return np.minimum(np.searchsorted(cdf, u, side="left"), kmax).astype(float)


def dgp_bimodal_poisson(spec: DgpSpec, rng=None) -> PanelDataset:
    """Treated = equal mixture of Poisson(5) and Poisson(20); Poisson donors."""
    _check(spec, "bimodal_poisson")
    rng = _rng(spec, rng)
    n = spec.n_micro
    halves = largest_remainder([0.5, 0.5], n)
    cells = {}
    for t in range(spec.n_periods):
        y = np.concatenate([poisson_inversion(r, c, rng) for r, c in zip(POISSON_TREATED, halves)])
        cells[(0, t)] = from_samples(y)
        for d, r in enumerate(POISSON_DONORS):
            cells[(d + 1, t)] = from_samples(poisson_inversion(r, n, rng))
    return _panel(cells, len(POISSON_DONORS) + 1, spec)


def corner_means() -> np.ndarray:
    return np.array(list(itertools.product((-CORNER, CORNER), repeat=2)))


def _bivariate(mean: np.ndarray, size: int, rng) -> np.ndarray:
    z = rng.normal(size=(size, 2))
    # lower Cholesky factor of [[1, rho], [rho, 1]]
    chol = np.array([[1.0, 0.0], [RHO, np.sqrt(1.0 - RHO * RHO)]])
    return mean + z @ chol.T


def dgp_multivariate(spec: DgpSpec, rng=None):
    """Bivariate Gaussian donors at the corners of {-3, 3}^2, treated = exact mixture."""
    _check(spec, "multivariate")
    rng = _rng(spec, rng)
    n = spec.n_micro
    means = corner_means()
    counts = largest_remainder(spec.lambda_true, n)
    cells = {}
    for t in range(spec.n_periods):
        for d in range(4):
            cells[(d + 1, t)] = from_samples(_bivariate(means[d], n, rng))
        y = np.vstack([_bivariate(means[d], c, rng) for d, c in enumerate(counts)])
        cells[(0, t)] = from_samples(y)
    return _panel(cells, 5, spec), SimplexWeights(spec.lambda_true)


def generate(spec: DgpSpec, rng=None) -> tuple[PanelDataset, SimplexWeights | None]:
    if spec.scenario == "contamination":
        return dgp_contamination(spec, rng)
    if spec.scenario == "support_gap":
        return dgp_support_gap(spec, rng), None
    if spec.scenario == "bimodal_poisson":
        return dgp_bimodal_poisson(spec, rng), None
    return dgp_multivariate(spec, rng)


def integer_pmf(m: EmpiricalMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Mass on integer bins, atoms rounded half up."""
    if m.dim != 1:
        raise ValueError("integer_pmf needs a univariate measure")
    bins = np.floor(m.values() + 0.5).astype(int)
    lo = bins.min()
    mass = np.bincount(bins - lo, weights=m.weights)
    return np.arange(lo, lo + mass.size), mass


def detect_modes(m: EmpiricalMeasure) -> list[int]:
    """Integer bins that beat both neighbours after 3-bin moving-average smoothing."""
    support, mass = integer_pmf(m)
    padded = np.concatenate([[0.0, 0.0], mass, [0.0, 0.0]])
    smooth = np.convolve(padded, np.ones(3) / 3.0, mode="valid")
    # smooth[i] is centred on padded[i + 1]; keep the bins of the original support
    inner = smooth[1:-1]
    left, right = smooth[:-2], smooth[2:]
    peaks = np.flatnonzero((inner > left) & (inner > right))
    return [int(support[k]) for k in peaks]


# Monte Carlo harness

DEFAULT_METHODS = {
    "contamination": ("wgan", "cdfl2", "w2quantile"),
    "support_gap": ("wgan", "cdfl2"),
    "bimodal_poisson": ("wgan", "w2quantile"),
    "multivariate": ("wgan",),
}
SUBSAMPLE_ATOMS = 64


def replication_seed(master_seed: int, index: int) -> int:
    return int(np.random.SeedSequence([int(master_seed), int(index)]).generate_state(1)[0])


def reference_weights(spec: DgpSpec) -> tuple[np.ndarray, str]:
    """True weights when the design has them, uniform otherwise."""
    if spec.scenario in ("contamination", "multivariate"):
        return np.asarray(spec.lambda_true), "truth"
    return np.full(spec.j_donors, 1.0 / spec.j_donors), "uniform"


def subsample(m: EmpiricalMeasure, k: int, rng: np.random.Generator) -> EmpiricalMeasure:
    """k atoms drawn with probability proportional to weight, reweighted uniformly."""
    idx = rng.choice(m.size, size=k, replace=True, p=m.weights)
    return from_samples(m.points[idx])


def fit_distances(synthetic: EmpiricalMeasure, target: EmpiricalMeasure, rng) -> tuple[float, float | None]:
    """(W1, W2) between synthetic and target; multivariate W1 on 64-atom subsamples, no W2."""
    if target.dim == 1:
        return w1_exact_1d(synthetic, target).value, w2_exact_1d(synthetic, target).value
    a = subsample(synthetic, SUBSAMPLE_ATOMS, rng)
    b = subsample(target, SUBSAMPLE_ATOMS, rng)
    return w1_exact_lp(a, b).value, None


@dataclass
class Replication:
    index: int
    seed: int
    weights: dict = field(default_factory=dict)  # method -> list of per-period lists
    aggregated: dict = field(default_factory=dict)  # method -> list
    w1: dict = field(default_factory=dict)  # method -> per-period W1
    w2: dict = field(default_factory=dict)
    seconds: dict = field(default_factory=dict)
    failures: dict = field(default_factory=dict)  # method -> message


def _run_replication(args) -> Replication:
    spec, methods, config, index, master_seed, grid_size = args
    seed = replication_seed(master_seed, index)
    rep_spec = dataclasses.replace(spec, seed=seed)
    panel, _ = generate(rep_spec)
    cfg = dataclasses.replace(config, seed=seed)
    rep = Replication(index, seed)
    for m in methods:
        t0 = time.perf_counter()
        try:
            fit = fitting.fit(panel, m, cfg, grid_size=grid_size)
        except Exception as exc:  # recorded, not hidden
            rep.failures[m] = f"{type(exc).__name__}: {exc}"
            rep.seconds[m] = time.perf_counter() - t0
            continue
        rep.seconds[m] = time.perf_counter() - t0
        rep.weights[m] = [w.tolist() for w in fit.per_period]
        rep.aggregated[m] = fit.aggregated.tolist()
        drng = np.random.default_rng([seed, 7])
        d1, d2 = [], []
        for p, lam in zip(panel.pre_periods, fit.per_period):
            synth = fitting.synthesize(panel, m, lam, p, grid_size)
            a, b = fit_distances(synth, panel.cell(panel.treated, p), drng)
            d1.append(a)
            d2.append(b)
        rep.w1[m], rep.w2[m] = d1, d2
    return rep


@dataclass
class PeriodRow:
    period: str
    method: str
    w1_mean: float
    w2_mean: float | None
    bias: list[float]
    var: list[float]


@dataclass
class McReport:
    spec: DgpSpec
    methods: tuple
    n_sim: int
    master_seed: int
    reference: list[float]
    reference_kind: str
    replications: list[Replication]
    config: EstimatorConfig

    def successful(self, method: str) -> list[Replication]:
        return [r for r in self.replications if method in r.aggregated]

    def failure_count(self, method: str) -> int:
        return sum(method in r.failures for r in self.replications)

    def per_period_weights(self, method: str) -> np.ndarray:
        """Array (replications, periods, J)."""
        return np.array([r.weights[method] for r in self.successful(method)])

    def aggregated_weights(self, method: str) -> np.ndarray:
        return np.array([r.aggregated[method] for r in self.successful(method)])

    def rmse(self, method: str) -> float:
        """sqrt of the mean over replications of the mean squared weight error."""
        err = self.aggregated_weights(method) - np.asarray(self.reference)
        return float(np.sqrt(np.mean(err * err)))

    def rmse_mean_of_roots(self, method: str) -> float:
        err = self.aggregated_weights(method) - np.asarray(self.reference)
        return float(np.mean(np.sqrt(np.mean(err * err, axis=1))))

    def period_rows(self) -> list[PeriodRow]:
        rows = []
        ref = np.asarray(self.reference)
        periods = [f"t{t + 1}" for t in range(self.spec.t0)]
        for m in self.methods:
            reps = self.successful(m)
            if not reps:
                continue
            w = self.per_period_weights(m)
            for k, p in enumerate(periods):
                w2 = [r.w2[m][k] for r in reps]
                rows.append(
                    PeriodRow(
                        p,
                        m,
                        float(np.mean([r.w1[m][k] for r in reps])),
                        None if w2[0] is None else float(np.mean(w2)),
                        (w[:, k].mean(axis=0) - ref).tolist(),
                        w[:, k].var(axis=0).tolist(),
                    )
                )
        return rows

    def summary(self, method: str) -> dict:
        if not self.successful(method):
            return {"failures": self.failure_count(method)}
        agg = self.aggregated_weights(method)
        per = self.per_period_weights(method)
        return {
            "rmse": self.rmse(method),
            "rmse_mean_of_roots": self.rmse_mean_of_roots(method),
            "mean_weights": agg.mean(axis=0).tolist(),
            "aggregated_bias": (agg.mean(axis=0) - np.asarray(self.reference)).tolist(),
            "aggregated_var": agg.var(axis=0).tolist(),
            "max_period_var": float(per.var(axis=0).max()),
            "failures": self.failure_count(method),
        }

    def to_dict(self, include_timing: bool = True) -> dict:
        d = {
            "spec": self.spec.to_dict(),
            "methods": list(self.methods),
            "n_sim": self.n_sim,
            "master_seed": self.master_seed,
            "reference": list(self.reference),
            "reference_kind": self.reference_kind,
            "rmse_definition": "sqrt(mean over replications of mean over j of (lam_hat_j - ref_j)^2)",
            "summary": {m: self.summary(m) for m in self.methods},
            "periods": [dataclasses.asdict(r) for r in self.period_rows()],
            "replications": [
                {
                    "index": r.index,
                    "seed": r.seed,
                    "weights": r.weights,
                    "aggregated": r.aggregated,
                    "w1": r.w1,
                    "w2": r.w2,
                    "failures": r.failures,
                }
                for r in self.replications
            ],
            "config": self.config.to_dict(),
        }
        if include_timing:
            d["timing"] = {
                m: [r.seconds.get(m) for r in self.replications] for m in self.methods
            }
        return d


def run_monte_carlo(
    spec: DgpSpec,
    methods: Sequence[str] | None = None,
    n_sim: int = 20,
    config: EstimatorConfig | None = None,
    master_seed: int = 0,
    jobs: int = 1,
    grid_size: int = 512,
) -> McReport:
    """Replicate a design n_sim times and fit every method on each draw.

    Replication r uses a seed derived from (master_seed, r) for both the data
    and the estimator, so results do not depend on ordering or ``jobs``.
    """
    if n_sim < 1:
        raise ValueError("n_sim must be >= 1")
    methods = tuple(methods or DEFAULT_METHODS[spec.scenario])
    bad = [m for m in methods if m not in METHODS]
    if bad:
        raise ValueError(f"unknown methods {bad}; choose from {METHODS}")
    config = config or EstimatorConfig()
    tasks = [(spec, methods, config, r, master_seed, grid_size) for r in range(n_sim)]
    if jobs > 1 and n_sim > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            reps = list(ex.map(_run_replication, tasks))
    else:
        reps = [_run_replication(t) for t in tasks]
    ref, kind = reference_weights(spec)
    return McReport(
        spec,
        methods,
        n_sim,
        master_seed,
        ref.tolist(),
        kind,
        sorted(reps, key=lambda r: r.index),
        config,
    )


def write_table(report: McReport, path) -> Path:
    """Per-period table: Period,Method,W2_mean,W1_mean,Bias_l1,Var_l1,...."""
    path = Path(path)
    j = len(report.reference)
    header = ["Period", "Method", "W2_mean", "W1_mean"]
    for k in range(1, j + 1):
        header += [f"Bias_l{k}", f"Var_l{k}"]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in report.period_rows():
            line = [row.period, row.method, "" if row.w2_mean is None else repr(row.w2_mean), repr(row.w1_mean)]
            for b, v in zip(row.bias, row.var):
                line += [repr(b), repr(v)]
            w.writerow(line)
    return path


def pmf_overlay(panel: PanelDataset, fits: dict, period=None, grid_size: int = 512) -> list[dict]:
    """Integer-bin masses of the target and each method's synthetic measure."""
    period = panel.post_periods[0] if period is None else period
    series = {"target": panel.cell(panel.treated, period)}
    for m, lam in fits.items():
        series[m] = fitting.synthesize(panel, m, lam, period, grid_size)
    tables = {k: dict(zip(*integer_pmf(v))) for k, v in series.items()}
    support = sorted(set().union(*[t.keys() for t in tables.values()]))
    return [
        {"value": int(x), **{f"{k}_mass": float(tables[k].get(x, 0.0)) for k in tables}}
        for x in support
    ]


def scatter_sample(panel: PanelDataset, lam: SimplexWeights, period=None, k: int = 500, seed: int = 0) -> list[dict]:
    """Points from the target and the synthetic mixture for 2D scatter plots."""
    period = panel.post_periods[0] if period is None else period
    rng = np.random.default_rng(seed)
    rows = []
    for label, m in (
        ("target", panel.cell(panel.treated, period)),
        ("synthetic", weighted_mixture(panel.donor_cells(period), lam)),
    ):
        for pt in subsample(m, k, rng).points:
            rows.append({"series": label, **{f"x{i + 1}": float(v) for i, v in enumerate(pt)}})
    return rows
