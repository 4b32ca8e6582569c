"""Adversarial Wasserstein-1 synthetic control weights.

Per pre-treatment period, a critic network is trained by Adam ascent on the
gradient-penalized dual objective while the donor weights follow entropic
mirror descent; per-period weights are then averaged across periods.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .critic import (
    DEFAULT_HIDDEN,
    DEFAULT_SLOPE,
    AdamState,
    adam_step,
    critic_loss_and_grads,
    forward,
    init_critic,
)
from .measures import (
    EmpiricalMeasure,
    PanelDataset,
    SimplexWeights,
    _draw_atoms,
    _is_uniform,
    sample_mixture,
    weighted_mixture,
)

LAMBDA_FLOOR = 1e-12
CONVERGENCE_WINDOW = 10


@dataclass(frozen=True)
class EstimatorConfig:
    eta: float = 0.01
    zeta: float = 10.0
    alpha_theta: float = 1e-3
    alpha_lambda: float = 0.002
    n_critic: int = 5
    max_outer_iters: int = 300
    lambda_tol: float = 1e-5
    batch_size: int = 0
    hidden: tuple[int, ...] = DEFAULT_HIDDEN
    leaky_slope: float = DEFAULT_SLOPE
    temporal_weights: tuple[float, ...] | None = None
    dtype: str = "float32"
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.temporal_weights is not None:
            object.__setattr__(
                self, "temporal_weights", tuple(float(w) for w in self.temporal_weights)
            )
        if self.eta < 0:
            raise ValueError("eta must be >= 0")
        if self.zeta <= 0:
            raise ValueError("zeta must be > 0")
        if self.alpha_theta <= 0 or self.alpha_lambda <= 0:
            raise ValueError("learning rates must be > 0")
        if self.n_critic < 1 or self.max_outer_iters < 1:
            raise ValueError("n_critic and max_outer_iters must be >= 1")
        if self.batch_size < 0:
            raise ValueError("batch_size must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden layer widths must be positive")
        if self.temporal_weights is not None:
            tw = np.asarray(self.temporal_weights)
            if np.any(tw < 0) or abs(tw.sum() - 1.0) > 1e-9:
                raise ValueError("temporal_weights must be nonnegative and sum to 1")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden"] = list(self.hidden)
        if self.temporal_weights is not None:
            d["temporal_weights"] = list(self.temporal_weights)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EstimatorConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**d)


@dataclass
class PeriodTrace:
    critic_objective: list[float] = field(default_factory=list)
    regularized_objective: list[float] = field(default_factory=list)
    iterations: int = 0
    converged: bool = False


@dataclass
class EstimationReport:
    periods: list
    per_period_weights: list[SimplexWeights]
    aggregated: SimplexWeights
    traces: list[PeriodTrace]
    config: EstimatorConfig

    @property
    def iterations_used(self) -> list[int]:
        return [t.iterations for t in self.traces]

    def to_dict(self) -> dict:
        return {
            "periods": [str(p) for p in self.periods],
            "per_period_weights": [w.tolist() for w in self.per_period_weights],
            "aggregated": self.aggregated.tolist(),
            "loss_traces": [
                {
                    "critic_objective": t.critic_objective,
                    "regularized_objective": t.regularized_objective,
                }
                for t in self.traces
            ],
            "iterations_used": self.iterations_used,
            "converged": [t.converged for t in self.traces],
            "config": self.config.to_dict(),
            "seed": self.config.seed,
        }


def neg_entropy(lam: np.ndarray) -> float:
    lam = np.maximum(lam, LAMBDA_FLOOR)
    return float(np.sum(lam * np.log(lam)))


def mirror_descent_step(lam, g, eta: float, alpha_lambda: float) -> SimplexWeights:
    """Exponentiated-gradient step on W1 + eta * sum(lam log lam).

    ``g`` is the gradient of the transport term with respect to the weights.
    """
    g = np.asarray(g, dtype=float)
    lam = np.maximum(np.asarray(getattr(lam, "values", lam), dtype=float), LAMBDA_FLOOR)
    if g.shape != lam.shape:
        raise ValueError(f"score vector has shape {g.shape}, weights {lam.shape}")
    if not np.all(np.isfinite(g)):
        raise ValueError("non-finite donor scores")
    logits = np.log(lam) - alpha_lambda * (g + eta * (1.0 + np.log(lam)))
    logits -= logits.max()
    new = np.exp(logits)
    new = np.maximum(new / new.sum(), LAMBDA_FLOOR)
    return SimplexWeights(new / new.sum())


def period_rng(seed: int, period_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(period_index)]))


class _Batcher:
    """Full-batch or seeded mini-batch access to one cell, in the critic's dtype."""

    def __init__(self, m: EmpiricalMeasure, batch_size: int, dtype):
        self.m = m
        self.points = m.points.astype(dtype)
        self.weights = m.weights.astype(dtype)
        self.batch_size = batch_size
        self.full = batch_size == 0 or batch_size >= m.size

    def draw(self, rng):
        if self.full:
            return self.points, self.weights
        idx = _draw_atoms(self.m, self.batch_size, rng)
        return self.points[idx], None

    def mean_value(self, net) -> float:
        return float(self.weights @ forward(net, self.points))


def _interp_partners(treated: np.ndarray, tw, rng) -> np.ndarray:
    if tw is None or _is_uniform(tw):
        return treated[rng.permutation(treated.shape[0])]
    return treated[rng.choice(treated.shape[0], size=treated.shape[0], p=tw)]


def fit_critic(
    source: EmpiricalMeasure,
    target: EmpiricalMeasure,
    steps: int = 2000,
    config: EstimatorConfig | None = None,
    rng: np.random.Generator | None = None,
    restarts: int = 1,
):
    """Train a critic between two fixed measures; returns (net, E_source f - E_target f).

    The returned transport term is the dual lower bound on W1(source, target)
    reached by the soft-penalty critic. In 1D a critic can settle on the
    reversed slope, since flipping it costs more penalty than it gains;
    ``restarts > 1`` trains from fresh inits and keeps the largest bound.
    """
    config = config or EstimatorConfig()
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if source.dim != target.dim:
        raise ValueError("source and target differ in dimension")
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    best = None
    for _ in range(restarts):
        fitted = _train_critic(source, target, steps, config, rng)
        if best is None or fitted[1] > best[1]:
            best = fitted
    return best


def _train_critic(source, target, steps, config, rng):
    net = init_critic(source.dim, rng, config.hidden, config.leaky_slope, np.dtype(config.dtype))
    adam = AdamState.for_network(net)
    sb = _Batcher(source, config.batch_size, net.dtype)
    tb = _Batcher(target, config.batch_size, net.dtype)
    one = SimplexWeights([1.0])
    for _ in range(steps):
        xs, ws = sb.draw(rng)
        xt, wt = tb.draw(rng)
        partners = _interp_partners(xs, ws, rng)
        synth = sample_mixture([target], one, xs.shape[0], rng)
        u = rng.random((xs.shape[0], 1))
        _, grads = critic_loss_and_grads(
            net, xs, [xt], one, config.zeta, u * partners + (1.0 - u) * synth,
            treated_weights=ws, donor_weights=None if wt is None else [wt],
        )
        adam_step(net, adam, grads, config.alpha_theta, ascend=True)
    return net, sb.mean_value(net) - tb.mean_value(net)


def estimate_cell(
    treated: EmpiricalMeasure,
    donors: Sequence[EmpiricalMeasure],
    config: EstimatorConfig,
    rng: np.random.Generator,
) -> tuple[SimplexWeights, PeriodTrace]:
    """Alternating critic ascent / mirror descent for one period."""
    j = len(donors)
    if j < 2:
        raise ValueError("need at least two donors")
    if any(d.dim != treated.dim for d in donors):
        raise ValueError("treated and donor cells differ in dimension")

    net = init_critic(treated.dim, rng, config.hidden, config.leaky_slope, np.dtype(config.dtype))
    adam = AdamState.for_network(net)
    lam = SimplexWeights.uniform(j)
    # an entropy step longer than 1/eta overshoots the Gibbs fixed point
    alpha_lam = config.alpha_lambda if config.eta == 0 else min(config.alpha_lambda, 1.0 / config.eta)

    tb = _Batcher(treated, config.batch_size, net.dtype)
    dbs = [_Batcher(d, config.batch_size, net.dtype) for d in donors]
    trace = PeriodTrace()
    moves: list[float] = []

    for it in range(config.max_outer_iters):
        for _ in range(config.n_critic):
            xt, wt = tb.draw(rng)
            drawn = [b.draw(rng) for b in dbs]
            partners = _interp_partners(xt, wt, rng)
            synth = sample_mixture(donors, lam, xt.shape[0], rng)
            u = rng.random((xt.shape[0], 1))
            xhat = u * partners + (1.0 - u) * synth
            loss, grads = critic_loss_and_grads(
                net,
                xt,
                [x for x, _ in drawn],
                lam,
                config.zeta,
                xhat,
                treated_weights=wt,
                donor_weights=None if any(w is None for _, w in drawn) else [w for _, w in drawn],
            )
            adam_step(net, adam, grads, config.alpha_theta, ascend=True)

        treated_mean = tb.mean_value(net)
        donor_means = np.array([b.mean_value(net) for b in dbs])
        transport = treated_mean - float(lam.values @ donor_means)
        trace.critic_objective.append(loss.total)
        trace.regularized_objective.append(transport + config.eta * neg_entropy(lam.values))

        new = mirror_descent_step(lam, -donor_means, config.eta, alpha_lam)
        moves.append(float(np.abs(new.values - lam.values).max()))
        lam = new
        trace.iterations = it + 1
        if len(moves) >= CONVERGENCE_WINDOW and np.mean(moves[-CONVERGENCE_WINDOW:]) < config.lambda_tol:
            trace.converged = True
            break
    return lam, trace


def estimate_period(panel: PanelDataset, period, config: EstimatorConfig, rng=None):
    if period not in panel.periods:
        raise KeyError(f"unknown period {period!r}")
    if panel.periods.index(period) >= panel.cutoff:
        raise ValueError(f"period {period!r} is after the cutoff")
    if rng is None:
        rng = period_rng(config.seed, panel.periods.index(period))
    return estimate_cell(panel.cell(panel.treated, period), panel.donor_cells(period), config, rng)


def _period_job(args):
    panel, k, config = args
    return estimate_period(panel, panel.periods[k], config, period_rng(config.seed, k))


def aggregate(per_period: Sequence[SimplexWeights], temporal_weights=None) -> SimplexWeights:
    w = np.asarray(
        temporal_weights if temporal_weights is not None else np.full(len(per_period), 1.0 / len(per_period))
    )
    if w.size != len(per_period):
        raise ValueError(f"{w.size} temporal weights for {len(per_period)} periods")
    agg = w @ np.array([p.values for p in per_period])
    return SimplexWeights(agg / agg.sum())


def estimate(panel: PanelDataset, config: EstimatorConfig, jobs: int = 1) -> EstimationReport:
    """Fit every pre-treatment period and aggregate the weights.

    Each period uses its own stream derived from (seed, period index), so the
    result does not depend on ``jobs``.
    """
    if panel.n_donors < 2:
        raise ValueError("need at least two donors")
    if config.temporal_weights is not None and len(config.temporal_weights) != panel.cutoff:
        raise ValueError(
            f"{len(config.temporal_weights)} temporal weights for {panel.cutoff} pre-periods"
        )
    tasks = [(panel, k, config) for k in range(panel.cutoff)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_period_job, tasks))
    else:
        results = [_period_job(t) for t in tasks]
    per = [r[0] for r in results]
    return EstimationReport(
        periods=list(panel.pre_periods),
        per_period_weights=per,
        aggregated=aggregate(per, config.temporal_weights),
        traces=[r[1] for r in results],
        config=config,
    )


def synthesize_counterfactual(panel: PanelDataset, lam: SimplexWeights, period) -> EmpiricalMeasure:
    if period not in panel.periods:
        raise KeyError(f"unknown period {period!r}")
    return weighted_mixture(panel.donor_cells(period), lam)
