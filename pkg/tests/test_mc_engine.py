import math
from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from mmaf.mc_engine import (
    ExperimentConfig,
    _lilliefors_stat,
    clt_from_samples,
    default_pad,
    estimate,
    ks_normal_test,
    map_reps,
    occupation_rep,
    run_clt,
    run_coupling,
    run_gap_probabilities,
    run_mixing,
    run_moments,
    run_small_time,
    sample_matrix,
)
from mmaf.rng_paths import ConfigurationError


def test_estimate_examples():
    assert estimate([1, 1, 1]) == estimate(np.ones(3))
    e = estimate([1, 1, 1])
    assert (e.value, e.stderr, e.reps) == (1.0, 0.0, 3)
    e = estimate([0, 2])
    assert (e.value, e.stderr) == (1.0, 1.0)
    with pytest.raises(ValueError):
        estimate([1.0])
    z = np.random.default_rng(3).standard_normal(10_000)
    e = estimate(z)
    assert abs(e.value) <= 4 * e.stderr


def test_config_validation_names_key():
    with pytest.raises(ConfigurationError, match="t exceeds T"):
        ExperimentConfig(T=1.0, t=2.0)
    with pytest.raises(ConfigurationError, match="^reps"):
        ExperimentConfig(reps=1)
    with pytest.raises(ConfigurationError, match="^offset"):
        ExperimentConfig(offset=1.0)
    with pytest.raises(ConfigurationError, match="unknown function"):
        ExperimentConfig(function="cos")
    cfg = ExperimentConfig(T=4.0)
    assert cfg.padding == default_pad(4.0) == 16 and cfg.time == 4.0


def test_lilliefors_statistic_matches_scipy():
    x = np.random.default_rng(5).standard_normal(500) * 2 + 1
    ref = stats.kstest(x, "norm", args=(x.mean(), x.std(ddof=1))).statistic
    assert float(_lilliefors_stat(x)) == pytest.approx(ref, rel=1e-12)


def test_ks_self_calibration():
    # p-values of Gaussian samples are uniform: rejection rate at 1% is 1% +/- 1%
    rng = np.random.Generator(np.random.Philox(2024))
    trials = 1000
    rejections = sum(ks_normal_test(rng.standard_normal(2000)).p_value < 0.01 for _ in range(trials))
    assert rejections / trials <= 0.02
    ps = [ks_normal_test(rng.standard_normal(2000)).p_value for _ in range(300)]
    assert stats.kstest(ps, "uniform").pvalue > 0.001


def test_ks_power_and_degenerate():
    rng = np.random.default_rng(9)
    assert ks_normal_test(rng.exponential(size=2000) - 1.0).p_value < 0.01
    res = ks_normal_test(np.full(100, 3.0))
    assert not res.applicable and math.isnan(res.p_value)
    with pytest.raises(ValueError):
        ks_normal_test(np.zeros(49))


SMALL = ExperimentConfig(T=1.0, M=200, n=64, reps=120, k_max=8)


def test_clt_zero_function_is_degenerate():
    rep = run_clt(replace(SMALL, function="zero"))
    assert rep.summary["degenerate"] and not rep.summary["ks_applicable"]
    assert all(y == 0.0 for _, y in rep.rows)


def test_clt_constant_function_scales_exactly():
    y1 = np.array([y for _, y in run_clt(replace(SMALL, function="one")).rows])
    yc = np.array([y for _, y in run_clt(replace(SMALL, function="const:2.5")).rows])
    np.testing.assert_allclose(yc, 2.5 * y1, rtol=1e-12, atol=1e-12)


def test_clt_report_shape_and_worker_independence():
    a = run_clt(SMALL)
    b = run_clt(replace(SMALL, workers=2))
    assert a.rows == b.rows and a.columns == ("rep", "Y")
    assert len(a.rows) == SMALL.reps and a.summary["k_max"] == 8


def test_map_reps_order():
    cfg = replace(SMALL, reps=7, workers=3)
    assert np.array_equal(np.vstack(map_reps(occupation_rep, cfg)), sample_matrix(replace(cfg, workers=1)))


def test_var_y_stable_under_grid_refinement():
    # reduced version of the default-config check: doubling M moves var(Y) < 3 combined se
    base = ExperimentConfig(T=1.0, M=250, n=128, reps=600, k_max=16, master_seed=8)
    _, s1 = clt_from_samples(sample_matrix(base), 16)
    _, s2 = clt_from_samples(sample_matrix(replace(base, M=500, master_seed=9)), 16)
    assert abs(s1["var_Y"] - s2["var_Y"]) < 3 * math.hypot(s1["var_Y_stderr"], s2["var_Y_stderr"])


def test_moments_examples():
    cfg = ExperimentConfig(experiment="moments", T=1.0, M=110, reps=200, function="one",
                           p_list=(1.0, 2.0, 4.0))
    rep = run_moments(cfg)
    by = {(t, p): (v, s) for t, p, v, s in rep.rows}
    for p in (1.0, 2.0, 4.0):
        assert by[(0.0, p)] == (3.0**p, 0.0)
    for t in sorted({t for t, _ in by}):
        assert by[(t, 4.0)][0] >= by[(t, 2.0)][0] ** 2 * (1 - 1e-12)  # Jensen, exact on samples
    assert len({t for t, _ in by}) == 12


def test_small_time_requires_derivative():
    with pytest.raises(ConfigurationError, match="derivative"):
        run_small_time(ExperimentConfig(experiment="smalltime", function="halfind", reps=10))


def test_small_time_matches_independent_particle_limit():
    # for t << 1 collisions are rare: sigma^2_t / t ~ (1 - exp(-8 pi^2 t)) / (2 t)
    cfg = ExperimentConfig(experiment="smalltime", reps=300, n=256, t_list=(0.01,), k_max=8)
    rep = run_small_time(cfg)
    t, val, se = rep.rows[0]
    oracle = (1 - math.exp(-8 * math.pi**2 * t)) / (2 * t)
    assert abs(val - oracle) <= 4 * se + 0.03 * oracle


def test_gap_probability_report():
    cfg = ExperimentConfig(experiment="mixing", gap_reps=3000, bridge=True)
    rows, summary = run_gap_probabilities(cfg)
    assert len(rows) == 6
    for s in summary.values():
        assert abs(s["z_vs_oracle"]) < 4.5


def test_coupling_report_small():
    cfg = ExperimentConfig(experiment="mixing", M=200, coupling_reps=200)
    rows, summary = run_coupling(cfg)
    for key, s in summary.items():
        assert s["occurrences"] > 0 and s["agreed"] == s["occurrences"], key


def test_mixing_records_failed_parts():
    cfg = ExperimentConfig(experiment="mixing", n=8, reps=20, decay_lags=25, coupling_reps=5)
    rep = run_mixing(cfg, parts=("coupling", "decay"))
    assert rep.summary["failed"] == ["decay"]
    assert "error" in rep.summary["decay"]
    assert any(r[0].startswith("coupling") for r in rep.rows)
