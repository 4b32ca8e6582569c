import itertools

import numpy as np
import pytest

from wsynth.critic import init_critic, set_params
from wsynth.measures import EmpiricalMeasure, from_samples


def dirac(*x):
    return from_samples([list(x)])


def atoms(values, weights=None):
    values = np.asarray(values, dtype=float)
    if weights is None:
        weights = np.full(values.shape[0], 1.0 / values.shape[0])
    return EmpiricalMeasure(values.reshape(values.shape[0], -1), np.asarray(weights, dtype=float))


def brute_force_matching_cost(a, b, p=1):
    """Min average |a_i - b_pi(i)|^p over all permutations (equal-size uniform measures)."""
    a = np.atleast_2d(np.asarray(a, dtype=float).T).T
    b = np.atleast_2d(np.asarray(b, dtype=float).T).T
    best = np.inf
    for perm in itertools.permutations(range(len(b))):
        d = np.linalg.norm(a - b[list(perm)], axis=1)
        best = min(best, np.mean(d**p))
    return best


def random_measure(rng, max_atoms=8, dim=1, scale=3.0, uniform=False):
    m = int(rng.integers(1, max_atoms + 1))
    pts = rng.normal(scale=scale, size=(m, dim))
    if uniform:
        w = np.full(m, 1.0 / m)
    else:
        w = rng.random(m) + 0.05
        w /= w.sum()
    return EmpiricalMeasure(pts, w)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def small_net(rng, dim=2, hidden=(5, 4), bias_scale=0.3):
    net = init_critic(dim, rng, hidden)
    for b in net.biases:
        b[...] = bias_scale * rng.normal(size=b.shape)
    return net


def _perturbed(net, k, idx, h):
    ps = [p.copy() for p in net.params()]
    ps[k][idx] += h
    other = net.copy()
    set_params(other, ps)
    return other


def fd_check(net, func, grads, h=1e-6):
    """Max relative error between analytic grads and central differences of func(net)."""
    worst = 0.0
    for k, p in enumerate(net.params()):
        for idx in np.ndindex(p.shape):
            num = (func(_perturbed(net, k, idx, h)) - func(_perturbed(net, k, idx, -h))) / (2 * h)
            # the floor keeps exactly-zero components (roundoff ~1e-10) from dominating
            err = abs(num - grads[k][idx]) / max(1e-4, abs(num), abs(grads[k][idx]))
            worst = max(worst, err)
    return worst
