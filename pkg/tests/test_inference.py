from fractions import Fraction

import numpy as np
import pytest

from conftest import dirac
from wsynth.estimator import EstimatorConfig
from wsynth.inference import (
    PlaceboResult,
    effect_statistic,
    permutation_p_value,
    placebo_distribution,
    post_effect,
)
from wsynth.measures import PanelDataset, SimplexWeights, from_samples


def null_panel(seed, n_units=5, n=60, t0=3, shift=0.0):
    rng = np.random.default_rng(seed)
    units = tuple(f"u{k}" for k in range(n_units))
    periods = tuple(range(t0 + 1))
    cells = {}
    for u in units:
        for p in periods:
            x = rng.normal(size=n)
            if u == "u0" and p >= t0:
                x = x + shift
            cells[(u, p)] = from_samples(x)
    return PanelDataset(units, periods, t0, cells)


def test_effect_statistic_basics():
    m = from_samples([0.0, 1.0, 4.0])
    assert effect_statistic(m, m) == 0.0
    assert effect_statistic(dirac(0.0), dirac(2.0)) == 2.0
    assert effect_statistic(dirac(0.0, 0.0), dirac(3.0, 4.0)) == pytest.approx(5.0)
    with pytest.raises(ValueError):
        effect_statistic(dirac(0.0), dirac(0.0, 0.0))


def test_p_value_arithmetic():
    assert permutation_p_value([1.0, 1.0, 1.0, 1.0, 1.0]) == (1.0, 5)
    assert permutation_p_value([5.0, 1.0, 2.0, 3.0, 4.0]) == (0.2, 1)
    assert permutation_p_value([2.0, 1.0, 2.0, 3.0, 0.5]) == (0.6, 3)


def test_result_rejects_negative():
    with pytest.raises(ValueError):
        PlaceboResult(["a", "b"], [-1.0, 0.0], 1.0, 2, [])


def test_p_value_support_and_fraction():
    res = placebo_distribution(null_panel(0), "cdfl2")
    j1 = len(res.statistics)
    assert j1 == 5
    assert res.p_fraction == Fraction(res.count, 5)
    assert res.p_value in {k / 5 for k in range(1, 6)}
    assert all(s >= 0 for s in res.statistics)
    assert all(abs(sum(w.values) - 1) < 1e-9 for w in res.weights)


def test_label_invariance():
    panel = null_panel(1)
    base = placebo_distribution(panel, "cdfl2")
    by_unit = dict(zip(base.units, base.statistics))
    for u in panel.units:
        rel = placebo_distribution(panel.relabel(u), "cdfl2")
        for v, s in zip(rel.units, rel.statistics):
            assert s == by_unit[v]


def test_label_invariance_wgan_seeded_by_unit():
    panel = null_panel(2, n_units=3, n=20, t0=1)
    cfg = EstimatorConfig(max_outer_iters=3, seed=5)
    a = placebo_distribution(panel, "wgan", cfg)
    b = placebo_distribution(panel.relabel("u2"), "wgan", cfg)
    assert dict(zip(a.units, a.statistics)) == dict(zip(b.units, b.statistics))


def test_monotone_in_injected_shift():
    stats = [
        placebo_distribution(null_panel(3, shift=s), "cdfl2").statistics[0]
        for s in (0.0, 0.5, 1.0, 2.0)
    ]
    assert all(b >= a for a, b in zip(stats, stats[1:]))


def test_large_shift_gives_smallest_p():
    res = placebo_distribution(null_panel(4, shift=5.0), "cdfl2")
    assert res.p_value == pytest.approx(0.2)


def test_exclude_treated_flag():
    panel = null_panel(5)
    res = placebo_distribution(panel, "cdfl2", exclude_treated=True)
    # donor placebo fits lose one donor
    assert [len(w) for w in res.weights] == [4, 3, 3, 3, 3]
    assert [len(w) for w in placebo_distribution(panel, "cdfl2").weights] == [4] * 5


def test_too_few_units():
    with pytest.raises(ValueError):
        placebo_distribution(null_panel(6, n_units=2), "cdfl2")
    with pytest.raises(ValueError):
        placebo_distribution(null_panel(6, n_units=3), "cdfl2", exclude_treated=True)


def test_failed_fit_aborts():
    def broken(sub, cfg):
        raise RuntimeError("fit failed")

    with pytest.raises(RuntimeError):
        placebo_distribution(null_panel(7), broken)


def test_custom_estimator_fn():
    def uniform(sub, cfg):
        return SimplexWeights.uniform(sub.n_donors)

    res = placebo_distribution(null_panel(8), uniform)
    assert all(w.tolist() == [0.25] * 4 for w in res.weights)
    panel = null_panel(8)
    assert res.statistics[0] == post_effect(panel, SimplexWeights.uniform(4))


def test_parallel_matches_sequential():
    panel = null_panel(9)
    a = placebo_distribution(panel, "cdfl2")
    b = placebo_distribution(panel, "cdfl2", jobs=2)
    assert a.statistics == b.statistics and a.p_value == b.p_value
