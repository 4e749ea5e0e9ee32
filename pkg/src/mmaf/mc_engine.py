"""Replication driver and the headline experiments.

Each experiment maps a per-replication function over replication ids (in a
process pool when ``workers > 1``) and reduces the results in replication
order, so the output never depends on the worker count.
"""
from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from functools import lru_cache, partial
from typing import Any, Callable, Sequence

import numpy as np
from scipy import stats

from .coalescing_flow import apply_flow_map
from .coupling import (
    covariance_decay,
    exact_gap_prob,
    first_gap,
    fit_decay,
    fit_gap_rate,
    gap_event,
    gap_indicators,
    per_rep_lag_covariances,
    verify_coupling,
)
from .occupation import (
    PeriodicFunction,
    constant,
    get_function,
    interval_integral,
    occupation_sample,
    sigma_series,
)
from .rng_paths import ConfigurationError, TimeGrid, refine, sample_driving

MAX_PARTICLES = 200_000


def default_pad(T: float) -> int:
    return math.ceil(4.0 * math.sqrt(T)) + 8


def resolve_function(name: str) -> PeriodicFunction:
    """Built-in function by id, or ``const:<c>`` for a constant."""
    if name.startswith("const:"):
        try:
            return constant(float(name.split(":", 1)[1]))
        except ValueError:
            raise ConfigurationError(f"bad constant function {name!r}") from None
    return get_function(name)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "clt"
    T: float = 1.0
    M: int = 1000
    t: float | None = None  # defaults to T
    n: int = 512
    reps: int = 2000
    pad: int | None = None  # defaults to ceil(4 sqrt(T)) + 8
    function: str = "sin2pi"
    offset: float = 0.0
    master_seed: int = 20240917
    k_max: int = 32
    bridge: bool = False
    workers: int = 1
    p_list: tuple[float, ...] = (2.0, 4.0)
    t_list: tuple[float, ...] = (0.05, 0.02, 0.01)
    steps_per_t: int = 100
    interval: tuple[float, float] = (0.0, 3.0)
    gap_cases: tuple[tuple[int, float], ...] = ((0, 1.0), (2, 0.25), (5, 0.1))
    gap_reps: int = 100_000
    gap_M: int = 64
    union_t: float = 0.25
    union_N: int = 18
    coupling_T: float = 0.25
    coupling_js: tuple[int, ...] = (1, 2, 3)
    coupling_reps: int = 1500
    decay_lags: int = 25

    def __post_init__(self):
        validate(self)

    @property
    def time(self) -> float:
        return self.T if self.t is None else self.t

    @property
    def padding(self) -> int:
        return default_pad(self.T) if self.pad is None else self.pad

    @property
    def grid(self) -> TimeGrid:
        return TimeGrid(self.T, self.M)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


CONFIG_KEYS = tuple(f.name for f in fields(ExperimentConfig))


def validate(cfg: ExperimentConfig) -> None:
    def bad(key, msg):
        raise ConfigurationError(f"{key}: {msg}")

    if not (cfg.T > 0 and math.isfinite(cfg.T)):
        bad("T", f"must be positive, got {cfg.T}")
    if int(cfg.M) != cfg.M or cfg.M < 1:
        bad("M", f"must be a positive integer, got {cfg.M}")
    if cfg.t is not None:
        if cfg.t < 0:
            bad("t", f"must be nonnegative, got {cfg.t}")
        if cfg.t > cfg.T:
            bad("t", f"t exceeds T ({cfg.t} > {cfg.T})")
    if cfg.n < 1:
        bad("n", f"must be positive, got {cfg.n}")
    if cfg.reps < 2:
        bad("reps", f"need at least 2 replications, got {cfg.reps}")
    if cfg.pad is not None and cfg.pad < 0:
        bad("pad", f"must be nonnegative, got {cfg.pad}")
    if not 0.0 <= cfg.offset < 1.0:
        bad("offset", f"must lie in [0, 1), got {cfg.offset}")
    if cfg.k_max < 1:
        bad("k_max", f"must be at least 1, got {cfg.k_max}")
    if cfg.workers < 1:
        bad("workers", f"must be at least 1, got {cfg.workers}")
    if any(p < 1 for p in cfg.p_list):
        bad("p_list", "moment orders must be >= 1")
    if any(not 0 < s <= cfg.T for s in cfg.t_list) and cfg.experiment == "smalltime":
        bad("t_list", f"times must lie in (0, T={cfg.T}]")
    if cfg.steps_per_t < 1:
        bad("steps_per_t", "must be positive")
    if not cfg.interval[0] < cfg.interval[1]:
        bad("interval", f"need a < b, got {cfg.interval}")
    pad = default_pad(cfg.T) if cfg.pad is None else cfg.pad
    if cfg.n + 2 * pad > MAX_PARTICLES:
        bad("n", f"n + 2*pad exceeds the particle budget {MAX_PARTICLES}")
    resolve_function(cfg.function)


@dataclass(frozen=True)
class Estimate:
    value: float
    stderr: float
    reps: int


def estimate(samples) -> Estimate:
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    return Estimate(float(x.mean()), float(x.std(ddof=1) / math.sqrt(x.size)), int(x.size))


@dataclass(frozen=True)
class KsResult:
    statistic: float
    p_value: float
    applicable: bool = True


def _lilliefors_stat(x: np.ndarray) -> np.ndarray:
    """KS distance to the normal with fitted mean and variance, along the last axis."""
    n = x.shape[-1]
    mu = x.mean(axis=-1, keepdims=True)
    sd = x.std(axis=-1, ddof=1, keepdims=True)
    z = np.sort((x - mu) / sd, axis=-1)
    cdf = stats.norm.cdf(z)
    i = np.arange(1, n + 1)
    d_plus = np.max(i / n - cdf, axis=-1)
    d_minus = np.max(cdf - (i - 1) / n, axis=-1)
    return np.maximum(d_plus, d_minus)


@lru_cache(maxsize=16)
def lilliefors_null(n: int, n_boot: int = 2000, seed: int = 0) -> np.ndarray:
    """Sorted bootstrap draws of the fitted-normal KS statistic for sample size ``n``."""
    rng = np.random.Generator(np.random.Philox(seed))
    out = np.empty(n_boot)
    chunk = max(1, 2_000_000 // n)
    for s in range(0, n_boot, chunk):
        e = min(n_boot, s + chunk)
        out[s:e] = _lilliefors_stat(rng.standard_normal((e - s, n)))
    out.sort()
    return out


def ks_normal_test(samples, n_boot: int = 2000, seed: int = 0) -> KsResult:
    """Lilliefors-type KS normality test with a parametric-bootstrap p-value.

    Mean and variance are re-estimated on every bootstrap draw, which carries
    the centering uncertainty into the null distribution.
    """
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 50:
        raise ValueError(f"need at least 50 samples, got {x.size}")
    if n_boot < 1000:
        raise ValueError("need at least 1000 bootstrap draws")
    if not np.all(np.isfinite(x)) or np.ptp(x) == 0:
        return KsResult(math.nan, math.nan, applicable=False)
    d = float(_lilliefors_stat(x))
    null = lilliefors_null(x.size, n_boot, seed)
    exceed = null.size - np.searchsorted(null, d, side="left")
    return KsResult(d, float((1 + exceed) / (1 + null.size)))


@dataclass
class Report:
    experiment: str
    columns: tuple[str, ...]
    rows: list[tuple] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)


def map_reps(func: Callable[[ExperimentConfig, int], Any], cfg: ExperimentConfig,
             rep_ids: Sequence[int] | None = None) -> list:
    """``[func(cfg, r) for r in rep_ids]``, possibly on a process pool."""
    rep_ids = list(range(cfg.reps) if rep_ids is None else rep_ids)
    if cfg.workers <= 1 or len(rep_ids) < 2:
        return [func(cfg, r) for r in rep_ids]
    chunk = max(1, math.ceil(len(rep_ids) / (4 * cfg.workers)))
    with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
        return list(pool.map(partial(func, cfg), rep_ids, chunksize=chunk))


# --- occupation samples -----------------------------------------------------

def occupation_rep(cfg: ExperimentConfig, rep: int) -> np.ndarray:
    """``A_k``, ``k = 1..n``, at time ``cfg.time`` for one replication."""
    k0, k1 = 1, cfg.n
    pad = cfg.padding
    ens = sample_driving(k0 - pad, k1 + pad, cfg.grid, cfg.master_seed, rep)
    flow = apply_flow_map(ens, bridge=cfg.bridge)
    f = resolve_function(cfg.function)
    return occupation_sample(flow, cfg.time, (k0, k1), f, cfg.offset).values


def sample_matrix(cfg: ExperimentConfig) -> np.ndarray:
    """``(reps, n)`` matrix of occupation functionals, rows in replication order."""
    return np.vstack(map_reps(occupation_rep, cfg))


# --- CLT ---------------------------------------------------------------------

def clt_from_samples(A: np.ndarray, k_max: int, tail_lags: int = 16,
                     ks_seed: int = 0) -> tuple[np.ndarray, dict[str, Any]]:
    R, n = A.shape
    mean_A = float(A.mean())
    Y = np.array([clt_statistic_row(row, mean_A) for row in A])
    summary: dict[str, Any] = {"mean_A": mean_A, "reps": R, "n": n, "k_max": k_max}
    max_lag = min(n - 1, k_max + tail_lags)
    if k_max > max_lag:
        raise ConfigurationError(f"k_max: window of {n} intervals too small for k_max={k_max}")
    lagcov = per_rep_lag_covariances(A, max_lag, mean_A)
    per_rep_sigma = lagcov[:, 0] + 2.0 * lagcov[:, 1: k_max + 1].sum(axis=1)
    covs = lagcov.mean(axis=0)
    cov_se = lagcov.std(axis=0, ddof=1) / math.sqrt(R)
    sig = estimate(per_rep_sigma)
    summary["sigma_series"] = sigma_series(covs[0], covs[1:], k_max)
    summary["sigma_series_stderr"] = sig.stderr
    var_y = estimate(Y ** 2 * R / (R - 1))
    summary["var_Y"] = var_y.value
    summary["var_Y_stderr"] = var_y.stderr
    combined = math.hypot(var_y.stderr, sig.stderr)
    summary["var_gap_in_stderr"] = (abs(var_y.value - summary["sigma_series"]) / combined
                                    if combined > 0 else (0.0 if var_y.value == summary["sigma_series"] else math.inf))
    if max_lag > k_max:
        tail = np.abs(covs[k_max + 1:]) / np.where(cov_se[k_max + 1:] > 0, cov_se[k_max + 1:], np.inf)
        summary["tail_max_z"] = float(tail.max())
    else:
        summary["tail_max_z"] = math.nan
    degenerate = np.ptp(Y) == 0
    summary["degenerate"] = bool(degenerate)
    if degenerate or R < 50:
        summary.update(ks_statistic=math.nan, ks_p_value=math.nan, skewness=math.nan,
                       excess_kurtosis=math.nan, ks_applicable=False)
    else:
        ks = ks_normal_test(Y, seed=ks_seed)
        summary.update(ks_statistic=ks.statistic, ks_p_value=ks.p_value, ks_applicable=ks.applicable,
                       skewness=float(stats.skew(Y)), excess_kurtosis=float(stats.kurtosis(Y)))
    return Y, summary


def clt_statistic_row(values: np.ndarray, mean_A: float) -> float:
    return float(np.sum(values - mean_A) / math.sqrt(values.shape[0]))


def run_clt(cfg: ExperimentConfig, samples: np.ndarray | None = None) -> Report:
    """Per-replication ``Y_t^n(f)`` with pooled centering, plus normality and
    variance diagnostics."""
    A = sample_matrix(cfg) if samples is None else samples
    Y, summary = clt_from_samples(A, cfg.k_max)
    summary["t"] = cfg.time
    return Report("clt", ("rep", "Y"), [(r, float(y)) for r, y in enumerate(Y)], summary)


def occupation_rows(A: np.ndarray, k0: int = 1) -> list[tuple]:
    return [(r, k0 + i, float(a)) for r, row in enumerate(A) for i, a in enumerate(row)]


# --- moments -------------------------------------------------------------------

def moment_time_indices(M: int, count: int = 11) -> list[int]:
    return [round(i * M / count) for i in range(1, count + 1)]


def _moments_worker(cfg: ExperimentConfig, rep: int) -> np.ndarray:
    a, b = cfg.interval
    k0, k1 = math.floor(a) + 1, math.ceil(b)
    pad = cfg.padding
    grid = cfg.grid
    ens = sample_driving(k0 - pad, k1 + pad, grid, cfg.master_seed, rep)
    flow = apply_flow_map(ens, bridge=cfg.bridge)
    f = resolve_function(cfg.function)
    idx = [0] + moment_time_indices(cfg.M)
    times = grid.times
    return np.array([interval_integral(flow, a, b, times[i], f) for i in idx])


def run_moments(cfg: ExperimentConfig) -> Report:
    """``E|int_(a,b] f dmu_t|^p`` over ``t = 0`` and 11 grid times in ``(0, T]``.

    The summary compares the max over ``t > 0`` from the first half of the
    replications with the one from all of them.
    """
    vals = np.vstack(map_reps(_moments_worker, cfg))
    times = cfg.grid.times[[0] + moment_time_indices(cfg.M)]
    rows = []
    summary: dict[str, Any] = {"interval": list(cfg.interval), "reps": cfg.reps}
    half = cfg.reps // 2
    for p in cfg.p_list:
        mom = np.abs(vals) ** p
        ests = [estimate(mom[:, i]) for i in range(len(times))]
        rows += [(float(t), float(p), e.value, e.stderr) for t, e in zip(times, ests)]
        full_max = max(ests[1:], key=lambda e: e.value)
        half_ests = [estimate(mom[:half, i]) for i in range(1, len(times))]
        half_max = max(half_ests, key=lambda e: e.value)
        combined = math.hypot(full_max.stderr, half_max.stderr)
        summary[f"p={p:g}"] = {
            "t0_value": ests[0].value,
            "max_value": full_max.value,
            "max_stderr": full_max.stderr,
            "half_max_value": half_max.value,
            "half_max_stderr": half_max.stderr,
            "max_change_in_stderr": abs(full_max.value - half_max.value) / combined if combined > 0 else 0.0,
            "all_finite": bool(all(math.isfinite(e.value) for e in ests)),
        }
    return Report("moments", ("t", "p", "estimate", "stderr"), rows, summary)


# --- small time ------------------------------------------------------------------

def small_time_from_samples(A: np.ndarray, t: float, k_max: int) -> dict[str, float]:
    R, n = A.shape
    k_max = min(k_max, n - 1)
    lagcov = per_rep_lag_covariances(A, k_max, float(A.mean()))
    s = (lagcov[:, 0] + 2.0 * lagcov[:, 1:].sum(axis=1)) / t
    est = estimate(s)
    covs = lagcov.mean(axis=0)
    return {
        "t": t,
        "sigma2_over_t": est.value,
        "stderr": est.stderr,
        "var_over_t": float(covs[0] / t),
        "cov_abs_sum_over_t": float(np.abs(covs[1:]).sum() / t),
    }


def run_small_time(cfg: ExperimentConfig, t_list: Sequence[float] | None = None) -> Report:
    """``(Var A~_0 + 2 sum_k cov(A~_0, A~_k)) / t`` with half-shifted intervals,
    one simulation per ``t`` on ``[0, t]`` with ``steps_per_t`` steps."""
    f = resolve_function(cfg.function)
    if f.derivative_at_0 is None:
        raise ConfigurationError(f"function: {f.id} has no derivative-at-0 metadata")
    t_list = tuple(cfg.t_list if t_list is None else t_list)
    if any(not 0 < t <= cfg.T for t in t_list):
        raise ConfigurationError(f"t_list: times must lie in (0, T={cfg.T}]")
    rows, series = [], []
    for t in t_list:
        sub = replace(cfg, experiment="smalltime_leg", T=float(t), M=cfg.steps_per_t, t=None,
                      offset=0.5, pad=None)
        A = sample_matrix(sub)
        res = small_time_from_samples(A, t, cfg.k_max)
        series.append(res)
        rows.append((float(t), res["sigma2_over_t"], res["stderr"]))
    target = f.derivative_at_0 ** 2
    summary = {"target": target, "series": series, "function": f.id}
    return Report("smalltime", ("t", "sigma2_over_t", "stderr"), rows, summary)


# --- mixing ------------------------------------------------------------------------

def _gap_worker(cfg: ExperimentConfig, rep: int) -> list[int]:
    """Plus gap indicators at ``l = 0`` for every configured ``(j, t)``, on the
    base grid and on the refined grid."""
    out = []
    for j, t in cfg.gap_cases:
        ens = sample_driving(0, j + 1, TimeGrid(t, cfg.gap_M), cfg.master_seed, rep)
        fine = refine(ens)
        out.append(int(gap_indicators(ens, 0, j, t, "plus", bridge=cfg.bridge)[j]))
        out.append(int(gap_indicators(fine, 0, j, t, "plus", bridge=cfg.bridge)[j]))
    return out


def run_gap_probabilities(cfg: ExperimentConfig) -> tuple[list[tuple], dict[str, Any]]:
    sub = replace(cfg, reps=cfg.gap_reps)
    hits = np.array(map_reps(_gap_worker, sub), dtype=np.float64)
    rows, summary = [], {}
    for c, (j, t) in enumerate(cfg.gap_cases):
        oracle = exact_gap_prob(j, t)
        coarse = estimate(hits[:, 2 * c])
        fine = estimate(hits[:, 2 * c + 1])
        rows.append(("gap", 0, j, float(t), coarse.value, coarse.stderr, oracle))
        rows.append(("gap_refined", 0, j, float(t), fine.value, fine.stderr, oracle))
        binom_se = math.sqrt(oracle * (1 - oracle) / sub.reps)
        summary[f"j={j},t={t:g}"] = {
            "estimate": coarse.value,
            "refined_estimate": fine.value,
            "oracle": oracle,
            "z_vs_oracle": (coarse.value - oracle) / binom_se,
            "refined_z_vs_oracle": (fine.value - oracle) / binom_se,
            "refinement_shift_in_stderr": abs(fine.value - coarse.value) / binom_se,
            "M": cfg.gap_M,
            "reps": sub.reps,
        }
    return rows, summary


def _union_worker(cfg: ExperimentConfig, rep: int) -> int:
    t = cfg.union_t
    N = cfg.union_N
    ens = sample_driving(0, N + 1, TimeGrid(t, cfg.gap_M), cfg.master_seed, rep)
    j = first_gap(ens, 0, N, t, "plus", bridge=cfg.bridge)
    return 0 if j is None else j


def run_gap_union(cfg: ExperimentConfig, reps: int | None = None) -> tuple[list[tuple], dict[str, Any]]:
    """``P(B^+_{0,N}(t))`` for ``N = 1..union_N`` from the first realised gap index."""
    sub = replace(cfg, reps=reps or cfg.coupling_reps)
    first = np.array(map_reps(_union_worker, sub))
    Ns = np.arange(1, cfg.union_N + 1)
    rows, probs = [], []
    for N in Ns:
        e = estimate((first >= 1) & (first <= N))
        probs.append(e.value)
        rows.append(("union", 0, int(N), float(cfg.union_t), e.value, e.stderr, math.nan))
    C, beta = fit_gap_rate(Ns, probs)
    return rows, {"fit_C": C, "fit_beta": beta, "t": cfg.union_t, "reps": sub.reps}


def _coupling_worker(cfg: ExperimentConfig, rep: int) -> list[tuple[int, int, int]]:
    """``(j, occurred, all_p_agree)`` for plus and minus sides at ``l = 0``."""
    T = cfg.coupling_T
    n = max(cfg.coupling_js) + cfg.padding
    grid = TimeGrid(T, cfg.M)
    ens = sample_driving(-n, n, grid, cfg.master_seed, rep)
    full = apply_flow_map(ens, (-n, n), "full", anchor=0)
    out = []
    for j in cfg.coupling_js:
        for sign in ("plus", "minus"):
            if not gap_event(ens, 0, j, T, sign):
                out.append((j, sign, 0, 0))
                continue
            ok = True
            for p in range(j + 1):
                if sign == "plus":
                    half = apply_flow_map(ens, (p, n), "plus")
                else:
                    half = apply_flow_map(ens, (-n, -p), "minus")
                ok &= verify_coupling(full, half, 0, j, p, sign)
            out.append((j, sign, 1, int(ok)))
    return out


def run_coupling(cfg: ExperimentConfig) -> tuple[list[tuple], dict[str, Any]]:
    sub = replace(cfg, reps=cfg.coupling_reps)
    res = map_reps(_coupling_worker, sub)
    rows, summary = [], {}
    for sign in ("plus", "minus"):
        for j in cfg.coupling_js:
            occ = sum(o for rr in res for (jj, s, o, _) in rr if jj == j and s == sign)
            ok = sum(a for rr in res for (jj, s, _, a) in rr if jj == j and s == sign)
            frac = ok / occ if occ else math.nan
            rows.append((f"coupling_{sign}", 0, j, cfg.coupling_T, frac, 0.0, 1.0))
            summary[f"{sign},j={j}"] = {"occurrences": occ, "agreed": ok}
    return rows, summary


def run_covariance_decay(cfg: ExperimentConfig, samples: np.ndarray | None = None):
    A = sample_matrix(cfg) if samples is None else samples
    series = covariance_decay(A, cfg.decay_lags)
    fit = fit_decay(series)
    rows = [("cov", 0, int(k), cfg.time, float(c), float(s), math.nan)
            for k, c, s in zip(series.lags, series.cov_hat, series.stderr)]
    summary = {
        "slope": fit.slope,
        "slope_stderr": fit.slope_stderr,
        "slope_upper95": fit.upper95,
        "significant_lags": [int(k) for k in fit.lags],
        "fit_method": fit.method,
        "decaying": bool(fit.negative),
    }
    return rows, summary, series, fit


MIXING_PARTS = ("gap", "union", "coupling", "decay")


def run_mixing(cfg: ExperimentConfig, parts: Sequence[str] = MIXING_PARTS) -> Report:
    """Gap probabilities vs. the closed form, gap unions, coupling checks and
    covariance decay, as one table.  Failed parts are listed in
    ``summary["failed"]`` instead of aborting the rest."""
    runners = {
        "gap": lambda: run_gap_probabilities(cfg),
        "union": lambda: run_gap_union(cfg),
        "coupling": lambda: run_coupling(cfg),
        "decay": lambda: run_covariance_decay(cfg)[:2],
    }
    report = Report("mixing", ("kind", "l", "param", "t", "estimate", "stderr", "oracle"))
    failed = []
    for part in parts:
        try:
            rows, summary = runners[part]()
        except Exception as exc:  # noqa: BLE001 - reported, other parts still run
            failed.append(part)
            report.summary[part] = {"error": f"{type(exc).__name__}: {exc}"}
            continue
        report.rows += rows
        report.summary[part] = summary
    report.summary["failed"] = failed
    return report


# --- simulate ---------------------------------------------------------------------

def _simulate_worker(cfg: ExperimentConfig, rep: int):
    k0, k1 = 1, cfg.n
    pad = cfg.padding
    ens = sample_driving(k0 - pad, k1 + pad, cfg.grid, cfg.master_seed, rep)
    return apply_flow_map(ens, bridge=cfg.bridge)


def run_simulate(cfg: ExperimentConfig) -> tuple[Report, Report]:
    """Positions ``(rep, k, i, t, x, mass)`` and merge events of each realization."""
    flows = map_reps(_simulate_worker, cfg)
    times = cfg.grid.times
    pos = Report("simulate", ("rep", "k", "i", "t", "x", "mass"))
    ev = Report("simulate_events", ("rep", "i", "t", "left_cluster", "right_cluster",
                                    "new_mass", "new_representative"))
    for r, flow in enumerate(flows):
        for row, k in enumerate(flow.indices):
            for i in range(flow.grid.M + 1):
                pos.rows.append((r, int(k), i, float(times[i]), float(flow.positions[row, i]),
                                 int(flow.mass_profile[row, i])))
        for e in flow.events:
            ev.rows.append((r, e.grid_index, float(times[e.grid_index]), e.left_cluster,
                            e.right_cluster, e.new_mass, e.new_representative))
    pos.summary = {"reps": cfg.reps, "domain": [1 - cfg.padding, cfg.n + cfg.padding],
                   "events": len(ev.rows)}
    return pos, ev
