"""Acceptance criteria 1-10 at their stated sizes and tolerances.

Run with ``pytest tests/test_acceptance.py -v``; the terminal summary lists
one PASS/FAIL line per criterion with the measured quantities.  Expect a
runtime of roughly ten minutes on one core.
"""
import math
import sys
from dataclasses import replace

import numpy as np
import pytest

from mmaf.cli_io import main as cli_main
from mmaf.coalescing_flow import (
    apply_flow_map,
    check_structure,
    quadratic_variation,
    realized_quadratic_variation,
    stopped_cross_variation,
)
from mmaf.mc_engine import (
    ExperimentConfig,
    clt_from_samples,
    default_pad,
    estimate,
    run_coupling,
    run_covariance_decay,
    run_gap_probabilities,
    run_moments,
    run_small_time,
    sample_matrix,
)
from mmaf.rng_paths import make_grid, sample_driving

pytestmark = pytest.mark.slow

SEED = 20240917


@pytest.fixture(scope="module")
def flows_10k():
    """x_0 statistics from 10^4 flows on [-pad, pad], T = 1, M = 1000."""
    pad = default_pad(1.0)
    g = make_grid(1.0, 1000)
    R = 10_000
    out = {k: np.empty(R) for k in ("x0", "rqv", "qv", "cross")}
    for r in range(R):
        f = apply_flow_map(sample_driving(-pad, pad, g, SEED, r))
        out["x0"][r] = f.path(0)[-1]
        out["rqv"][r] = realized_quadratic_variation(f, 0)
        out["qv"][r] = quadratic_variation(f, 0, 1.0)
        out["cross"][r] = stopped_cross_variation(f, 0, 1)
    return out


@pytest.fixture(scope="module")
def occupation_t1():
    """A_k, k = 1..512, t = 1, f = sin(2 pi x), 5000 replications.  The first
    2000 rows are exactly the samples of the 2000-replication CLT run."""
    cfg = ExperimentConfig(experiment="clt", T=1.0, M=1000, n=512, reps=5000,
                           function="sin2pi", master_seed=SEED)
    return cfg, sample_matrix(cfg)


def test_criterion_01_structure(report_detail):
    g = make_grid(1.0, 2000)
    pad = default_pad(1.0)
    violations = 0
    for r in range(1000):
        f = apply_flow_map(sample_driving(1 - pad, 64 + pad, g, SEED, r))
        violations += len(check_structure(f))
    report_detail(f"violations={violations} over 1000 realizations")
    assert violations == 0


def test_criterion_02_martingale_and_qv(flows_10k, report_detail):
    x0 = estimate(flows_10k["x0"])
    rqv, qv = estimate(flows_10k["rqv"]), estimate(flows_10k["qv"])
    z_mean = abs(x0.value) / x0.stderr
    z_qv = abs(rqv.value - qv.value) / math.hypot(rqv.stderr, qv.stderr)
    report_detail(f"|mean x0|/se={z_mean:.2f} |QV gap|/se={z_qv:.2f}")
    assert z_mean <= 4 and z_qv <= 4


def test_criterion_03_cross_variation(flows_10k, report_detail):
    cv = estimate(flows_10k["cross"])
    z = abs(cv.value) / cv.stderr
    report_detail(f"mean={cv.value:.3g} |mean|/se={z:.2f}")
    assert z <= 4


def test_criterion_04_coupling(report_detail):
    cfg = ExperimentConfig(experiment="mixing", M=1000, coupling_T=0.25, coupling_js=(1, 2, 3),
                           coupling_reps=1500, master_seed=SEED)
    _, summary = run_coupling(cfg)
    plus = {k: v for k, v in summary.items() if k.startswith("plus")}
    minus = {k: v for k, v in summary.items() if k.startswith("minus")}
    occ = {k: v["occurrences"] for k, v in plus.items()}
    report_detail(f"plus occurrences={occ} all agree={all(v['agreed'] == v['occurrences'] for v in plus.values())}"
                  f" minus agree={all(v['agreed'] == v['occurrences'] for v in minus.values())}")
    for key, v in summary.items():
        assert v["agreed"] == v["occurrences"], key
    assert min(occ.values()) >= 500


def test_criterion_05_gap_oracle(report_detail):
    cfg = ExperimentConfig(experiment="mixing", gap_reps=100_000, gap_M=64, bridge=True,
                           master_seed=SEED)
    _, summary = run_gap_probabilities(cfg)
    parts = []
    for key, s in summary.items():
        parts.append(f"{key}: z={s['z_vs_oracle']:+.2f} shift={s['refinement_shift_in_stderr']:.2f}")
    report_detail("; ".join(parts))
    for s in summary.values():
        assert abs(s["z_vs_oracle"]) <= 4
        assert s["refinement_shift_in_stderr"] < 2


def test_criterion_06_clt(occupation_t1, report_detail):
    _, A = occupation_t1
    _, s = clt_from_samples(A[:2000], k_max=32)
    report_detail(f"KS p={s['ks_p_value']:.3f} skew={s['skewness']:+.3f} "
                  f"exkurt={s['excess_kurtosis']:+.3f} var gap/se={s['var_gap_in_stderr']:.2f}")
    assert s["ks_p_value"] > 0.01
    assert abs(s["skewness"]) < 0.15
    assert abs(s["excess_kurtosis"]) < 0.3
    assert s["var_gap_in_stderr"] <= 3


def test_criterion_07_covariance_decay(occupation_t1, report_detail):
    cfg, A = occupation_t1
    _, summary, _, fit = run_covariance_decay(replace(cfg, decay_lags=25), samples=A)
    report_detail(f"slope={fit.slope:.3f} upper95={fit.upper95:.3f} "
                  f"lags={summary['significant_lags']} ({fit.method})")
    assert fit.negative


def test_criterion_08_small_time(report_detail):
    cfg = ExperimentConfig(experiment="smalltime", function="sin2pi", t_list=(0.05, 0.02, 0.01),
                           steps_per_t=100, reps=5000, n=512, k_max=32, master_seed=SEED)
    rep = run_small_time(cfg)
    target = rep.summary["target"]
    vals = [r[1] for r in rep.rows]
    dist = [abs(v - target) for v in vals]
    last = rep.summary["series"][-1]
    rel = dist[-1] / target
    tail_ratio = last["cov_abs_sum_over_t"] / last["var_over_t"]
    report_detail(f"series={[round(v, 2) for v in vals]} target={target:.3f} "
                  f"rel.err(t=0.01)={rel:.1%} cov tail/var={tail_ratio:.1%}")
    assert all(b > a for a, b in zip(vals, vals[1:])), "not increasing"
    assert all(b < a for a, b in zip(dist, dist[1:])), "not approaching the limit"
    assert tail_ratio < 0.10
    assert rel <= 0.15


def test_criterion_09_moments(report_detail):
    cfg = ExperimentConfig(experiment="moments", T=1.0, M=1000, function="one", p_list=(2.0, 4.0),
                           interval=(0.0, 3.0), reps=4000, master_seed=SEED)
    rep = run_moments(cfg)
    parts = []
    for p in (2.0, 4.0):
        s = rep.summary[f"p={p:g}"]
        parts.append(f"p={p:g}: max={s['max_value']:.3f} change/se={s['max_change_in_stderr']:.2f}")
        assert s["all_finite"]
        assert s["t0_value"] == 3.0**p
        assert s["max_change_in_stderr"] < 2
    assert all(se == 0.0 for t, _, _, se in rep.rows if t == 0.0)
    report_detail("; ".join(parts))


REPRO_RUNS = [
    ["simulate", "--M", "200", "--n", "16", "--reps", "4"],
    ["clt", "--M", "500", "--n", "256", "--reps", "200", "--dump-occupation"],
    ["moments", "--M", "500", "--reps", "400"],
    ["smalltime", "--reps", "200", "--n", "256"],
    ["mixing", "--M", "500", "--n", "128", "--reps", "200", "--gap-reps", "4000",
     "--coupling-reps", "200", "--bridge"],
]


def test_criterion_10_reproducibility(tmp_path, report_detail):
    checked = 0
    for argv in REPRO_RUNS:
        outs = []
        for tag, workers in (("a", "1"), ("b", "1"), ("c", "3")):
            out = tmp_path / f"{argv[0]}_{tag}"
            assert cli_main(argv + ["--workers", workers, "--seed", str(SEED), "--out", str(out)]) == 0
            outs.append(out)
        for csv in sorted(outs[0].glob("*.csv")):
            ref = csv.read_bytes()
            assert ref
            for other in outs[1:]:
                assert (other / csv.name).read_bytes() == ref, f"{argv[0]}: {csv.name}"
            checked += 1
    report_detail(f"{checked} CSV files identical across reruns and worker counts")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
