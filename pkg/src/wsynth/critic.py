"""Fully-connected scalar critic with hand-written first and second order backprop.

Layout (row-vector convention, batch of n inputs ``X`` with shape (n, d))::

    Z_1 = X W_1 + b_1,  A_1 = act(Z_1)
    Z_l = A_{l-1} W_l + b_l,  A_l = act(Z_l)
    f   = A_L w_out + b_out

Leaky ReLU is piecewise linear, so the input gradient depends on the
parameters only through the weight matrices; the activation pattern is
locally constant and contributes nothing to the penalty's parameter gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

DEFAULT_SLOPE = 0.2
DEFAULT_HIDDEN = (64, 64)


@dataclass
class CriticNetwork:
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    slope: float = DEFAULT_SLOPE

    @property
    def dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def hidden(self) -> tuple[int, ...]:
        return tuple(w.shape[1] for w in self.weights[:-1])

    def params(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "CriticNetwork":
        return CriticNetwork(
            [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.slope
        )

    @classmethod
    def zeros(cls, dim: int, hidden: Sequence[int] = DEFAULT_HIDDEN, slope=DEFAULT_SLOPE):
        sizes = [dim, *hidden, 1]
        ws = [np.zeros((a, b)) for a, b in zip(sizes[:-1], sizes[1:])]
        bs = [np.zeros(b) for b in sizes[1:]]
        return cls(ws, bs, slope)


def init_critic(
    dim: int,
    rng: np.random.Generator,
    hidden: Sequence[int] = DEFAULT_HIDDEN,
    slope: float = DEFAULT_SLOPE,
    dtype=np.float64,
) -> CriticNetwork:
    """Glorot-uniform weights, zero biases.

    Draws are always made in float64 and then cast, so the float32 and float64
    networks built from the same seed start from the same function.
    """
    sizes = [dim, *hidden, 1]
    ws, bs = [], []
    for fan_in, fan_out in zip(sizes[:-1], sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype))
        bs.append(np.zeros(fan_out, dtype=dtype))
    return CriticNetwork(ws, bs, slope)


def _as_batch(net: CriticNetwork, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=net.dtype)
    single = x.ndim <= 1
    if x.ndim == 0:
        x = x.reshape(1, 1)
    elif x.ndim == 1:
        x = x.reshape(1, -1) if x.size == net.dim else x.reshape(-1, 1)
    if x.shape[1] != net.dim:
        raise ValueError(f"critic expects inputs of dimension {net.dim}, got {x.shape[1]}")
    if not np.all(np.isfinite(x)):
        raise ValueError("critic input must be finite")
    return x, single and x.shape[0] == 1


def _affine(a: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    if w.shape[0] == 1:
        # rank-1 products are much slower through BLAS than broadcasting
        return a * w[0] + b
    z = a @ w
    z += b
    return z


def _forward_cache(net: CriticNetwork, x: np.ndarray):
    acts = [x]
    slopes = []
    a = x
    lo = net.dtype.type(net.slope)
    span = net.dtype.type(1.0 - net.slope)
    for w, b in zip(net.weights[:-1], net.biases[:-1]):
        z = _affine(a, w, b)
        # slope per unit: 1 where z >= 0 else `slope`; much faster than np.where
        s = (z >= 0).astype(net.dtype)
        s *= span
        s += lo
        a = z * s
        acts.append(a)
        slopes.append(s)
    out = (a @ net.weights[-1])[:, 0] + net.biases[-1][0]
    return out, acts, slopes


def forward(net: CriticNetwork, x) -> np.ndarray | float:
    """Critic value at a single point or a batch of points."""
    xb, single = _as_batch(net, x)
    out, _, _ = _forward_cache(net, xb)
    return float(out[0]) if single else out


def _input_deltas(net: CriticNetwork, slopes: list[np.ndarray]) -> list[np.ndarray]:
    """delta_l = d f / d Z_l for every hidden layer, first layer first."""
    d = slopes[-1] * net.weights[-1][:, 0]
    deltas = [d]
    for l in range(len(slopes) - 2, -1, -1):
        d = slopes[l] * (d @ net.weights[l + 1].T)
        deltas.append(d)
    deltas.reverse()
    return deltas


def grad_input(net: CriticNetwork, x) -> np.ndarray:
    """d f / d x, using slope 1 at activation kinks."""
    xb, single = _as_batch(net, x)
    _, _, slopes = _forward_cache(net, xb)
    g = _input_deltas(net, slopes)[0] @ net.weights[0].T
    return g[0] if single else g


def _weighted_output_grads(net: CriticNetwork, x: np.ndarray, coef: np.ndarray):
    """Value sum_i coef_i f(x_i), its parameter gradient, and f itself."""
    out, acts, slopes = _forward_cache(net, x)
    gw = [None] * len(net.weights)
    gb = [None] * len(net.biases)
    gw[-1] = (coef @ acts[-1])[:, None]
    gb[-1] = np.array([coef.sum()], dtype=net.dtype)
    da = coef[:, None] * net.weights[-1][:, 0]
    for l in range(len(slopes) - 1, -1, -1):
        dz = da * slopes[l]
        gw[l] = acts[l].T @ dz if l else _outer_sum(acts[0], dz)
        gb[l] = dz.sum(axis=0)
        if l:
            da = dz @ net.weights[l].T
    return float(coef @ out), gw + gb, out


def _outer_sum(x: np.ndarray, dz: np.ndarray) -> np.ndarray:
    if x.shape[1] == 1:
        return (x[:, 0] @ dz)[None, :]
    return x.T @ dz


def penalty_and_grads(net: CriticNetwork, xhat: np.ndarray):
    """mean_i (||grad_x f(xhat_i)|| - 1)^2 and its parameter gradient."""
    n = xhat.shape[0]
    _, _, slopes = _forward_cache(net, xhat)
    deltas = _input_deltas(net, slopes)
    g = deltas[0] @ net.weights[0].T
    norm = np.sqrt(np.sum(g * g, axis=1))
    pen = float(np.mean((norm - 1.0) ** 2))
    scale = np.divide(2.0 * (norm - 1.0), norm, out=np.zeros_like(norm), where=norm > 0) / n
    dg = g * scale[:, None]

    nh = len(slopes)
    gw = [None] * (nh + 1)
    gw[0] = _outer_sum(dg, deltas[0])
    ddelta = dg @ net.weights[0]
    for l in range(nh - 1):
        e = slopes[l] * ddelta
        gw[l + 1] = e.T @ deltas[l + 1]
        ddelta = e @ net.weights[l + 1]
    gw[nh] = np.sum(slopes[-1] * ddelta, axis=0)[:, None]
    gb = [np.zeros_like(b) for b in net.biases]
    return pen, gw + gb


@dataclass(frozen=True)
class CriticLossBreakdown:
    transport_term: float
    penalty_term: float
    total: float


def critic_loss_and_grads(
    net: CriticNetwork,
    treated_batch: np.ndarray,
    donor_batches: Sequence[np.ndarray],
    lam,
    zeta: float,
    interpolates: np.ndarray,
    treated_weights: np.ndarray | None = None,
    donor_weights: Sequence[np.ndarray] | None = None,
):
    """Penalized critic objective (to be maximized) and its parameter gradient.

    transport = E_treated[f] - sum_j lam_j E_donor_j[f], with batch means
    optionally weighted per atom; penalty is the two-sided gradient penalty
    at ``interpolates``. Returns ``(CriticLossBreakdown, grads)`` with grads
    ordered like ``net.params()``.
    """
    lam = np.asarray(getattr(lam, "values", lam), dtype=float)
    if len(donor_batches) != lam.size:
        raise ValueError(f"{len(donor_batches)} donor batches but {lam.size} weights")
    dt = net.dtype
    batches = [np.asarray(treated_batch, dtype=dt)] + [np.asarray(b, dtype=dt) for b in donor_batches]
    if any(b.shape[0] == 0 for b in batches) or np.asarray(interpolates).shape[0] == 0:
        raise ValueError("empty batch")
    coefs = [_batch_weights(batches[0], treated_weights)]
    for j, b in enumerate(batches[1:]):
        w = None if donor_weights is None else donor_weights[j]
        coefs.append(-lam[j] * _batch_weights(b, w))
    x = np.vstack(batches)
    coef = np.concatenate(coefs).astype(dt)

    transport, grads, _ = _weighted_output_grads(net, x, coef)
    if zeta:
        pen, pgrads = penalty_and_grads(net, np.asarray(interpolates, dtype=dt))
        grads = [g - zeta * pg for g, pg in zip(grads, pgrads)]
    else:
        pen = 0.0
    return CriticLossBreakdown(transport, pen, transport - zeta * pen), grads


def _batch_weights(b: np.ndarray, w: np.ndarray | None) -> np.ndarray:
    if w is None:
        return np.full(b.shape[0], 1.0 / b.shape[0])
    return np.asarray(w, dtype=float)


def set_params(net: CriticNetwork, flat: Sequence[np.ndarray]) -> None:
    k = len(net.weights)
    net.weights = [np.array(p, dtype=net.dtype) for p in flat[:k]]
    net.biases = [np.array(p, dtype=net.dtype) for p in flat[k:]]


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_network(cls, net: CriticNetwork) -> "AdamState":
        ps = net.params()
        return cls([np.zeros_like(p) for p in ps], [np.zeros_like(p) for p in ps])


def adam_step(
    net: CriticNetwork,
    state: AdamState,
    grads: Sequence[np.ndarray],
    alpha: float,
    ascend: bool = True,
) -> None:
    """Bias-corrected Adam update applied in place to ``net`` and ``state``."""
    params = net.params()
    if len(grads) != len(params):
        raise ValueError(f"expected {len(params)} gradient arrays, got {len(grads)}")
    for p, g in zip(params, grads):
        if np.shape(g) != p.shape:
            raise ValueError(f"gradient shape {np.shape(g)} does not match {p.shape}")
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    lr = alpha * math.sqrt(1.0 - b2**state.step) / (1.0 - b1**state.step)
    eps = state.eps * math.sqrt(1.0 - b2**state.step)
    sign = 1.0 if ascend else -1.0
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        # eps is scaled so this matches the textbook form m_hat / (sqrt(v_hat) + eps)
        p += (sign * lr) * m / (np.sqrt(v) + eps)
