"""Gap events of the driving motions, the pathwise coupling they imply, and
covariance decay of occupation functionals.

A plus gap event at ``(l, j)`` asks the drivers ``l..l+j`` to stay at or below
``l+j+1/2`` while ``w_{l+j+1}`` stays strictly above it; the minus event is
the mirror image.  On such an event nothing can cross the level, so the flow
to the right of it does not see the particles to the left.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numba
import numpy as np
from scipy import stats
from scipy.special import erf

from .coalescing_flow import FlowRealization
from .occupation import OccupationSample
from .rng_paths import TAG_GAP_MAX, TAG_GAP_MIN, ConfigurationError, DrivingEnsemble, cells_for

Sign = Literal["plus", "minus"]


@dataclass(frozen=True)
class GapEventRecord:
    l: int
    j: int
    t: float
    sign: str
    occurred: bool


@dataclass(frozen=True)
class DecaySeries:
    lags: np.ndarray
    cov_hat: np.ndarray
    stderr: np.ndarray
    # covariance matrix of the cov_hat estimates (between-replication spread / R)
    estimate_cov: np.ndarray | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if not (len(self.lags) == len(self.cov_hat) == len(self.stderr)):
            raise ValueError("lags, cov_hat and stderr must have equal length")
        if np.any(np.diff(self.lags) <= 0):
            raise ValueError("lags must be strictly increasing")


def _no_crossing_prob(gaps: np.ndarray, dt: float) -> float:
    """Probability that a unit-rate Brownian path through grid values whose
    distances to a barrier are ``gaps`` (all > 0) never touches it."""
    x = -2.0 * gaps[:-1] * gaps[1:] / dt
    return float(np.exp(np.sum(np.log1p(-np.exp(x)))))


def _gap_uniform(ensemble: DrivingEnsemble, k: int, tag: int) -> float:
    return float(cells_for(*ensemble.seed_record)(k, tag).random())


def _stays_below(ensemble, k, level, i_end, bridge) -> bool:
    w = ensemble.path(k)[: i_end + 1]
    if np.max(w) > level:
        return False
    if not bridge:
        return True
    q = _no_crossing_prob(level - w, ensemble.grid.dt)
    return _gap_uniform(ensemble, k, TAG_GAP_MAX) < q


def _stays_above(ensemble, k, level, i_end, bridge, strict=True) -> bool:
    w = ensemble.path(k)[: i_end + 1]
    m = np.min(w)
    if m < level or (strict and m == level):
        return False
    if not bridge:
        return True
    q = _no_crossing_prob(w - level, ensemble.grid.dt)
    return _gap_uniform(ensemble, k, TAG_GAP_MIN) < q


def _stays_below_strict(ensemble, k, level, i_end, bridge) -> bool:
    w = ensemble.path(k)[: i_end + 1]
    if np.max(w) >= level:
        return False
    if not bridge:
        return True
    q = _no_crossing_prob(level - w, ensemble.grid.dt)
    return _gap_uniform(ensemble, k, TAG_GAP_MAX) < q


def gap_drivers(l: int, j: int, sign: Sign) -> tuple[int, int]:
    """Index range of the drivers the event ``A^sign_{l,j}`` depends on."""
    if sign == "plus":
        return l, l + j + 1
    if sign == "minus":
        return l - j - 1, l
    raise ConfigurationError(f"sign must be 'plus' or 'minus', got {sign!r}")


def gap_event(ensemble: DrivingEnsemble, l: int, j: int, t: float, sign: Sign = "plus",
              bridge: bool = False) -> bool:
    """Whether ``A^sign_{l,j}(t)`` holds for the drivers.

    With ``bridge=True`` the grid check is sharpened by one Bernoulli draw per
    driver with the exact Brownian-bridge non-crossing probability, so the
    event has its continuous-time probability at any ``M``.  Max and min
    checks of one driver use separate uniforms.
    """
    if j < 0:
        raise ConfigurationError(f"j must be nonnegative, got {j}")
    lo, hi = gap_drivers(l, j, sign)
    if lo < ensemble.index_lo or hi > ensemble.index_hi:
        raise ConfigurationError(
            f"gap event needs drivers [{lo}, {hi}], ensemble has [{ensemble.index_lo}, {ensemble.index_hi}]"
        )
    i_end = ensemble.grid.index_of(t)
    if sign == "plus":
        level = l + j + 0.5
        if not _stays_above(ensemble, l + j + 1, level, i_end, bridge):
            return False
        return all(_stays_below(ensemble, k, level, i_end, bridge) for k in range(l, l + j + 1))
    level = l - j - 0.5
    if not _stays_below_strict(ensemble, l - j - 1, level, i_end, bridge):
        return False
    return all(_stays_above(ensemble, k, level, i_end, bridge, strict=False)
               for k in range(l - j, l + 1))


def gap_union(ensemble: DrivingEnsemble, l: int, N: int, t: float, sign: Sign = "plus",
              bridge: bool = False) -> bool:
    """``B^sign_{l,N}(t)``: some gap event with ``j`` in ``1..N``."""
    if N < 1:
        raise ConfigurationError(f"N must be positive, got {N}")
    return bool(np.any(gap_indicators(ensemble, l, N, t, sign, bridge)[1:]))


@numba.njit(cache=True)
def _no_crossing(w, level, sign, dt):  # pragma: no cover - jitted
    logq = 0.0
    for i in range(w.shape[0] - 1):
        g0 = sign * (level - w[i])
        g1 = sign * (level - w[i + 1])
        logq += np.log1p(-np.exp(-2.0 * g0 * g1 / dt))
    return np.exp(logq)


@numba.njit(cache=True)
def _gap_kernel(W, l_eff, N, bridge, u_below, u_above, dt):  # pragma: no cover - jitted
    nd = W.shape[0]
    wmax = np.empty(nd)
    wmin = np.empty(nd)
    for a in range(nd):
        wmax[a] = W[a].max()
        wmin[a] = W[a].min()
    out = np.zeros(N + 1, dtype=np.bool_)
    for j in range(N + 1):
        level = l_eff + j + 0.5
        if not wmin[j + 1] > level:
            continue
        ok = True
        for a in range(j + 1):
            if wmax[a] > level:
                ok = False
                break
        if not ok:
            continue
        if bridge:
            if not u_above[j + 1] < _no_crossing(W[j + 1], level, -1.0, dt):
                continue
            for a in range(j + 1):
                if not u_below[a] < _no_crossing(W[a], level, 1.0, dt):
                    ok = False
                    break
        out[j] = ok
    return out


def gap_indicators(ensemble: DrivingEnsemble, l: int, N: int, t: float, sign: Sign = "plus",
                   bridge: bool = False) -> np.ndarray:
    """``[A^sign_{l,j}(t) for j in 0..N]`` in one pass; agrees with
    :func:`gap_event` draw for draw."""
    if N < 0:
        raise ConfigurationError(f"N must be nonnegative, got {N}")
    if sign not in ("plus", "minus"):
        raise ConfigurationError(f"sign must be 'plus' or 'minus', got {sign!r}")
    lo, hi = (l, l + N + 1) if sign == "plus" else (l - N - 1, l)
    if lo < ensemble.index_lo or hi > ensemble.index_hi:
        raise ConfigurationError(
            f"gap events need drivers [{lo}, {hi}], ensemble has [{ensemble.index_lo}, {ensemble.index_hi}]"
        )
    i_end = ensemble.grid.index_of(t)
    W = ensemble.paths[lo - ensemble.index_lo: hi - ensemble.index_lo + 1, : i_end + 1]
    ks = range(lo, hi + 1)
    if sign == "minus":
        # mirror k -> l - k, w -> -w; the plus logic then applies
        W = -W[::-1]
        ks = ks[::-1]
        l_eff = -l
        tag_below, tag_above = TAG_GAP_MIN, TAG_GAP_MAX
    else:
        l_eff = l
        tag_below, tag_above = TAG_GAP_MAX, TAG_GAP_MIN
    if bridge:
        cells = cells_for(*ensemble.seed_record)
        u_below = np.array([cells(k, tag_below).random() for k in ks])
        u_above = np.array([cells(k, tag_above).random() for k in ks])
    else:
        u_below = u_above = np.zeros(len(ks))
    return _gap_kernel(np.ascontiguousarray(W), float(l_eff), N, bridge, u_below, u_above,
                       ensemble.grid.dt)


def first_gap(ensemble: DrivingEnsemble, l: int, N: int, t: float, sign: Sign = "plus",
              bridge: bool = False) -> int | None:
    """Smallest ``j`` in ``1..N`` whose gap event holds, or None."""
    hits = np.flatnonzero(gap_indicators(ensemble, l, N, t, sign, bridge)[1:])
    return int(hits[0]) + 1 if hits.size else None


def max_below_prob(a: float, t: float) -> float:
    """P(max of standard BM on [0, t] <= a), reflection principle."""
    return float(erf(a / math.sqrt(2.0 * t)))


def exact_gap_prob(j: int, t: float) -> float:
    """Closed-form probability of ``A^+_{l,j}(t)`` (independent of ``l``)."""
    if t <= 0:
        raise ConfigurationError(f"t must be positive, got {t}")
    if j < 0:
        raise ConfigurationError(f"j must be nonnegative, got {j}")
    p = max_below_prob(0.5, t)
    for m in range(j + 1):
        p *= max_below_prob(m + 0.5, t)
    return p


def verify_coupling(full: FlowRealization, half: FlowRealization, l: int, j: int, p: int,
                    sign: Sign = "plus") -> bool:
    """Bit-exact agreement of ``full`` and the one-sided flow ``half`` beyond the gap.

    ``half`` is the one-sided map started at ``l+p`` (plus) or ``l-p`` (minus)
    and built from the same drivers.  Compared indices are ``k > l+j`` (plus)
    or ``k < l-j`` (minus) inside both domains.
    """
    if full.grid != half.grid or full.seed_record != half.seed_record:
        raise ConfigurationError("flows were not built from the same driving ensemble")
    if not 0 <= p <= j:
        raise ConfigurationError(f"p must lie in 0..{j}, got {p}")
    if sign == "plus":
        ks = range(l + j + 1, min(full.domain[1], half.domain[1]) + 1)
        if half.domain[0] != l + p:
            raise ConfigurationError(f"one-sided flow must start at {l + p}, got {half.domain}")
    elif sign == "minus":
        ks = range(max(full.domain[0], half.domain[0]), l - j)
        if half.domain[1] != l - p:
            raise ConfigurationError(f"one-sided flow must end at {l - p}, got {half.domain}")
    else:
        raise ConfigurationError(f"sign must be 'plus' or 'minus', got {sign!r}")
    for k in ks:
        if not np.array_equal(full.path(k), half.path(k)):
            return False
    return True


def per_rep_lag_covariances(values: np.ndarray, max_lag: int, mean: float | None = None) -> np.ndarray:
    """``out[r, k]`` = average of ``(A_i - mean)(A_{i+k} - mean)`` over pairs in
    replication ``r``'s window, for ``k = 0..max_lag``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim != 2:
        raise ValueError("values must be (reps, window)")
    n = values.shape[1]
    if max_lag >= n:
        raise ConfigurationError(f"window of {n} intervals too small for lag {max_lag}")
    if mean is None:
        mean = float(values.mean())
    c = values - mean
    out = np.empty((values.shape[0], max_lag + 1))
    for k in range(max_lag + 1):
        out[:, k] = np.einsum("ri,ri->r", c[:, : n - k], c[:, k:]) / (n - k)
    return out


def _as_matrix(samples) -> np.ndarray:
    if isinstance(samples, np.ndarray):
        return samples
    samples = list(samples)
    if samples and isinstance(samples[0], OccupationSample):
        windows = {s.window for s in samples}
        if len(windows) != 1:
            raise ConfigurationError("samples must share a common window")
        return np.vstack([s.values for s in samples])
    return np.asarray(samples, dtype=np.float64)


def covariance_decay(samples, k_max: int, mean: float | None = None) -> DecaySeries:
    """Lag covariances ``cov(A_0, A_k)``, ``k = 1..k_max``, with standard errors
    from the spread over replications."""
    if k_max < 1:
        raise ConfigurationError("covariance series starts at lag 1 (variance is handled separately)")
    values = _as_matrix(samples)
    if values.shape[0] < 2:
        raise ConfigurationError("need at least two replications")
    per_rep = per_rep_lag_covariances(values, k_max, mean)[:, 1:]
    R = per_rep.shape[0]
    return DecaySeries(np.arange(1, k_max + 1), per_rep.mean(axis=0),
                       per_rep.std(axis=0, ddof=1) / math.sqrt(R),
                       np.atleast_2d(np.cov(per_rep, rowvar=False)) / R)


@dataclass(frozen=True)
class DecayFit:
    slope: float
    slope_stderr: float
    upper95: float  # one-sided 95% upper confidence bound on the slope
    n_points: int
    lags: np.ndarray
    method: str = "ols"

    @property
    def negative(self) -> bool:
        return math.isfinite(self.upper95) and self.upper95 < 0


def fit_decay(series: DecaySeries, z: float = 4.0) -> DecayFit:
    """Least-squares slope of ``log|cov|`` on ``sqrt(k)`` over lags with
    ``|cov| > z * stderr``.

    When the series carries the joint covariance of its estimates, the slope's
    standard error comes from the delta method (the slope is a smooth function
    of the lag means), which needs only two lags and accounts for correlation
    between lags.  Otherwise the usual residual-based interval is used, which
    needs three.
    """
    sig = np.abs(series.cov_hat) > z * series.stderr
    lags = series.lags[sig]
    x = np.sqrt(lags.astype(float))
    c = series.cov_hat[sig]
    if series.estimate_cov is not None and lags.size >= 2:
        w = (x - x.mean()) / np.sum((x - x.mean()) ** 2)
        slope = float(w @ np.log(np.abs(c)))
        grad = w / c  # d slope / d cov_hat
        S = series.estimate_cov[np.ix_(sig, sig)]
        se = float(math.sqrt(max(grad @ S @ grad, 0.0)))
        return DecayFit(slope, se, float(slope + stats.norm.ppf(0.95) * se), int(lags.size), lags, "delta")
    if lags.size < 3:
        return DecayFit(math.nan, math.nan, math.nan, int(lags.size), lags)
    res = stats.linregress(x, np.log(np.abs(c)))
    upper = res.slope + stats.t.ppf(0.95, lags.size - 2) * res.stderr
    return DecayFit(float(res.slope), float(res.stderr), float(upper), int(lags.size), lags)


def fit_gap_rate(Ns: Sequence[int], probs: Sequence[float]) -> tuple[float, float]:
    """Fit ``1 - P(B_N) ~ C exp(-beta * max(sqrt(N) - sqrt(2), 1))``; returns ``(C, beta)``."""
    Ns = np.asarray(Ns, dtype=float)
    q = 1.0 - np.asarray(probs, dtype=float)
    ok = q > 0
    if ok.sum() < 2:
        return math.nan, math.nan
    x = np.maximum(np.sqrt(Ns[ok]) - math.sqrt(2.0), 1.0)
    y = np.log(q[ok])
    if np.ptp(x) == 0:
        return math.nan, math.nan
    slope, intercept = np.polyfit(x, y, 1)
    return float(math.exp(intercept)), float(-slope)


def stabilization_check(master_seed: int, rep: int, l: int, n: int, N: int,
                        grid) -> tuple[bool, bool]:
    """Compare flows on ``[l-n, l+n]`` and ``[l-2n, l+2n]`` (both anchored at ``l``).

    Returns ``(applicable, identical)``: applicable when gaps on both sides of
    ``l`` occur within ``N``; identical when every particle between the two
    realised gaps has the same path in both flows.
    """
    from .coalescing_flow import apply_flow_map
    from .rng_paths import sample_driving

    if N + 1 > n:
        raise ConfigurationError(f"need n >= N + 1, got n={n}, N={N}")
    ens = sample_driving(l - 2 * n, l + 2 * n, grid, master_seed, rep)
    t = grid.T
    jp = first_gap(ens, l, N, t, "plus")
    jm = first_gap(ens, l, N, t, "minus")
    if jp is None or jm is None:
        return False, False
    small = apply_flow_map(ens, (l - n, l + n), "full", anchor=l)
    big = apply_flow_map(ens, (l - 2 * n, l + 2 * n), "full", anchor=l)
    same = all(np.array_equal(small.path(k), big.path(k)) for k in range(l - jm, l + jp + 1))
    return True, same
