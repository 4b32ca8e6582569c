import csv
import dataclasses

import numpy as np
import pytest

from wsynth.estimator import EstimatorConfig
from wsynth.measures import from_samples
from wsynth.ot_oracle import w1_exact_1d
from wsynth.simlab import (
    CORNER,
    DgpSpec,
    McReport,
    contamination_count,
    corner_means,
    detect_modes,
    dgp_bimodal_poisson,
    dgp_contamination,
    dgp_multivariate,
    dgp_support_gap,
    largest_remainder,
    poisson_inversion,
    run_monte_carlo,
    write_table,
)


def test_spec_validation():
    for bad in (
        dict(epsilon=1.5),
        dict(gamma=1.0),
        dict(n_micro=1),
        dict(lambda_true=(0.5, 0.6, 0.0, -0.1)),
        dict(scenario="nope"),
        dict(lambda_true=(0.5, 0.5)),
        dict(scenario="bimodal_poisson", j_donors=3),
    ):
        with pytest.raises(ValueError):
            DgpSpec(**bad)


def test_counts():
    assert contamination_count(0.04, 300) == 12
    assert contamination_count(0.005, 300) == 2  # 1.5 rounds up
    np.testing.assert_array_equal(largest_remainder([0.15, 0.25, 0.35, 0.25], 300), [45, 75, 105, 75])
    c = largest_remainder([1 / 3] * 3, 10)
    assert c.sum() == 10 and c.max() - c.min() <= 1


def test_contamination_clean_and_counts():
    spec = DgpSpec(epsilon=0.0, seed=3)
    panel, lam, clean = dgp_contamination(spec, return_clean=True)
    assert lam.tolist() == [0.15, 0.25, 0.35, 0.25]
    for p, c in zip(panel.periods, clean):
        np.testing.assert_array_equal(panel.cell("treated", p).points, c.points)
    spec4 = dataclasses.replace(spec, epsilon=0.04)
    p4, _, clean4 = dgp_contamination(spec4, return_clean=True)
    for p, c in zip(p4.periods, clean4):
        diff = np.sum(p4.cell("treated", p).values() != c.values())
        assert diff == 12
    # clean parts shared across epsilon
    np.testing.assert_array_equal(clean4[0].points, clean[0].points)


def test_contamination_noise_off():
    panel, _ = dgp_contamination(DgpSpec(sigma_noise=0.0, seed=1))
    for p in panel.periods:
        for d in panel.donor_cells(p):
            assert np.ptp(d.values()) == 0.0


def test_contamination_monotone_in_epsilon():
    for seed in range(5):
        dists = []
        for eps in (0.01, 0.02, 0.03, 0.04):
            panel, _, clean = dgp_contamination(DgpSpec(epsilon=eps, seed=seed), return_clean=True)
            dists.append(w1_exact_1d(clean[0], panel.cell("treated", panel.periods[0])).value)
        assert all(b >= a for a, b in zip(dists, dists[1:]))


def test_support_gap():
    p0 = dgp_support_gap(DgpSpec(scenario="support_gap", gamma=0.0, seed=0))
    assert min(np.abs(d.values()).min() for d in p0.donor_cells("t1")) < 0.1
    for seed in range(5):
        panel = dgp_support_gap(DgpSpec(scenario="support_gap", gamma=0.9, seed=seed))
        for p in panel.periods:
            assert np.abs(panel.cell("treated", p).values()).max() < 0.5
            assert min(np.abs(d.values()).min() for d in panel.donor_cells(p)) >= 0.9
    panel = dgp_support_gap(DgpSpec(scenario="support_gap", gamma=0.6, seed=0))
    t = panel.cell("treated", "t1").values()
    d = np.concatenate([m.values() for m in panel.donor_cells("t1")])
    gap = np.min(np.abs(d[:, None] - t[None, :]))
    assert gap >= 0.1


def test_poisson_moments():
    rng = np.random.default_rng(0)
    x = poisson_inversion(2.0, 10000, rng)
    assert np.all(x == np.round(x))
    assert abs(x.var() - 2.0) < 0.5
    spec = DgpSpec(scenario="bimodal_poisson", n_micro=10000, seed=1)
    panel = dgp_bimodal_poisson(spec)
    t = panel.cell("treated", "t1")
    assert abs(t.values().mean() - 12.5) < 0.5
    assert abs(panel.donor_cells("t1")[0].values().var() - 2.0) < 0.5
    modes = detect_modes(t)
    assert any(abs(m - 5) <= 2 for m in modes) and any(abs(m - 20) <= 2 for m in modes)


def test_multivariate_moments():
    spec = DgpSpec(scenario="multivariate", n_micro=2000, seed=2)
    panel, lam = dgp_multivariate(spec)
    means = corner_means()
    for d, mu in zip(panel.donor_cells("t1"), means):
        pts = d.points
        assert np.abs(pts.mean(axis=0) - mu).max() < 0.15
        assert abs(np.corrcoef(pts.T)[0, 1] - 0.5) < 0.1
    t = panel.cell("treated", "t1").points
    nearest = np.argmin(((t[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    frac = np.bincount(nearest, minlength=4) / len(t)
    assert np.abs(frac - lam.values).max() < 0.05
    assert CORNER == 3.0


def test_detect_modes_rules():
    assert detect_modes(from_samples([1.0] * 2 + [2.0] * 5 + [3.0] * 9 + [4.0] * 5 + [5.0] * 2)) == [3]
    # a flat plateau has no strict maximum
    assert detect_modes(from_samples([1.0, 2.0, 3.0, 4.0, 5.0, 6.0])) == []


@pytest.fixture(scope="module")
def small_report():
    spec = DgpSpec(epsilon=0.04, n_micro=60)
    return run_monte_carlo(spec, ["cdfl2", "w2quantile"], 4, master_seed=11)


def test_report_definitions(small_report):
    r = small_report
    ref = np.asarray(r.reference)
    agg = r.aggregated_weights("cdfl2")
    assert r.rmse("cdfl2") == pytest.approx(np.sqrt(np.mean((agg - ref) ** 2)))
    per = r.per_period_weights("cdfl2")
    rows = [row for row in r.period_rows() if row.method == "cdfl2"]
    for k, row in enumerate(rows):
        np.testing.assert_allclose(np.array(row.bias), per[:, k].mean(0) - ref, atol=1e-12)
        assert min(row.var) >= 0
    d = r.to_dict()
    assert d["summary"]["cdfl2"]["failures"] == 0
    assert "rmse_mean_of_roots" in d["summary"]["cdfl2"]


def test_replication_order_independent(small_report):
    again = run_monte_carlo(small_report.spec, ["cdfl2", "w2quantile"], 4, master_seed=11, jobs=2)
    assert again.to_dict(include_timing=False) == small_report.to_dict(include_timing=False)
    shuffled = McReport(**{**vars(small_report), "replications": small_report.replications[::-1]})
    assert shuffled.rmse("cdfl2") == pytest.approx(small_report.rmse("cdfl2"), abs=1e-15)


def test_failures_are_counted():
    rep = run_monte_carlo(DgpSpec(scenario="multivariate", n_micro=20), ["cdfl2"], 2, master_seed=0)
    assert rep.failure_count("cdfl2") == 2
    assert "ValueError" in rep.replications[0].failures["cdfl2"]


def test_table_schema(small_report, tmp_path):
    path = write_table(small_report, tmp_path / "t.csv")
    with path.open() as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["Period", "Method", "W2_mean", "W1_mean"] + [
        f"{k}_l{j}" for j in range(1, 5) for k in ("Bias", "Var")
    ]
    assert len(rows) == 1 + 3 * 2


def test_wgan_smoke_deterministic():
    spec = DgpSpec(epsilon=0.01, n_micro=30, t0=1)
    cfg = EstimatorConfig(max_outer_iters=4)
    a = run_monte_carlo(spec, ["wgan"], 1, cfg, master_seed=2)
    b = run_monte_carlo(spec, ["wgan"], 1, cfg, master_seed=2)
    assert a.to_dict(include_timing=False) == b.to_dict(include_timing=False)
