"""Occupation point process of a flow and its unit-interval functionals."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .coalescing_flow import FlowRealization
from .rng_paths import ConfigurationError


@dataclass(frozen=True)
class PeriodicFunction:
    """A bounded period-one test function."""

    id: str
    eval: Callable[[np.ndarray], np.ndarray]
    bound: float
    derivative_at_0: Optional[float] = None
    is_odd: bool = False

    def __call__(self, x):
        return self.eval(np.asarray(x, dtype=np.float64))

    def scaled(self, c: float) -> "PeriodicFunction":
        return combine(c, self, 0.0, ZERO)


def _sin2pi(x):
    return np.sin(2.0 * np.pi * x)


def _one(x):
    return np.ones_like(x)


def _zero(x):
    return np.zeros_like(x)


def _halfind(x):
    frac = x - np.floor(x)
    return ((frac > 0.0) & (frac <= 0.5)).astype(np.float64)


SIN2PI = PeriodicFunction("sin2pi", _sin2pi, 1.0, derivative_at_0=2.0 * np.pi, is_odd=True)
ONE = PeriodicFunction("one", _one, 1.0, derivative_at_0=0.0)
ZERO = PeriodicFunction("zero", _zero, 0.0, derivative_at_0=0.0, is_odd=True)
HALFIND = PeriodicFunction("halfind", _halfind, 1.0)

FUNCTIONS = {f.id: f for f in (SIN2PI, ONE, HALFIND, ZERO)}


def get_function(name: str) -> PeriodicFunction:
    try:
        return FUNCTIONS[name]
    except KeyError:
        raise ConfigurationError(f"unknown function {name!r}; choose from {sorted(FUNCTIONS)}") from None


def constant(c: float) -> PeriodicFunction:
    return PeriodicFunction(f"const({c!r})", lambda x: np.full_like(x, c), abs(c),
                            derivative_at_0=0.0, is_odd=(c == 0))


def combine(a: float, f: PeriodicFunction, b: float, g: PeriodicFunction) -> PeriodicFunction:
    """The function ``a*f + b*g``."""
    d = None
    if f.derivative_at_0 is not None and g.derivative_at_0 is not None:
        d = a * f.derivative_at_0 + b * g.derivative_at_0
    return PeriodicFunction(
        f"{a!r}*{f.id}+{b!r}*{g.id}",
        lambda x: a * f.eval(x) + b * g.eval(x),
        abs(a) * f.bound + abs(b) * g.bound,
        derivative_at_0=d,
        is_odd=f.is_odd and g.is_odd,
    )


@dataclass(frozen=True)
class OccupationSample:
    t: float
    window: tuple[int, int]
    values: np.ndarray  # values[k - window[0]] = A_k
    interval_offset: float = 0.0

    def __getitem__(self, k: int) -> float:
        return float(self.values[k - self.window[0]])


def cluster_positions(flow: FlowRealization, t: float) -> np.ndarray:
    """Distinct cluster positions at grid time ``t`` (sorted)."""
    i = flow.grid.index_of(t)
    x = flow.positions[:, i]
    keep = np.empty(x.shape[0], dtype=bool)
    keep[0] = True
    keep[1:] = x[1:] != x[:-1]
    return x[keep]


def occupation_count(flow: FlowRealization, a: float, b: float, t: float) -> int:
    """Number of distinct cluster positions in ``(a, b]``."""
    if not a < b:
        raise ConfigurationError(f"need a < b, got ({a}, {b}]")
    p = cluster_positions(flow, t)
    return int(np.count_nonzero((p > a) & (p <= b)))


def interval_integral(flow: FlowRealization, a: float, b: float, t: float,
                      f: PeriodicFunction) -> float:
    """``int_(a,b] f dmu_t``."""
    if not a < b:
        raise ConfigurationError(f"need a < b, got ({a}, {b}]")
    p = cluster_positions(flow, t)
    p = p[(p > a) & (p <= b)]
    return float(np.sum(f(p))) if p.size else 0.0


def functional_A(flow: FlowRealization, k: int, t: float, f: PeriodicFunction,
                 offset: float = 0.0) -> float:
    return interval_integral(flow, k - 1 + offset, k + offset, t, f)


def occupation_sample(flow: FlowRealization, t: float, window: tuple[int, int],
                      f: PeriodicFunction, offset: float = 0.0) -> OccupationSample:
    """All ``A_k`` for ``k`` in ``window`` in one pass over the cluster positions."""
    if not 0.0 <= offset < 1.0:
        raise ConfigurationError(f"offset must lie in [0, 1), got {offset}")
    k0, k1 = window
    if k0 > k1:
        raise ConfigurationError(f"empty window {window}")
    p = cluster_positions(flow, t)
    # p in (k-1+offset, k+offset]  <=>  k = ceil(p - offset)
    k = np.ceil(p - offset).astype(np.int64)
    sel = (k >= k0) & (k <= k1)
    values = np.bincount(k[sel] - k0, weights=f(p[sel]), minlength=k1 - k0 + 1)
    return OccupationSample(t, (k0, k1), values.astype(np.float64), offset)


def clt_statistic(sample: OccupationSample, n: int, mean_A: float) -> float:
    """``sum_{k=1..n} (A_k - mean_A) / sqrt(n)``."""
    if n < 1:
        raise ConfigurationError("n must be positive")
    k0, k1 = sample.window
    if k0 > 1 or k1 < n:
        raise ConfigurationError(f"window {sample.window} does not cover 1..{n}")
    a = sample.values[1 - k0: n + 1 - k0]
    return float(np.sum(a - mean_A) / math.sqrt(n))


def sigma_series(var0: float, covs, k_max: int) -> float:
    """``var0 + 2 * sum_{k=1..k_max} cov_k``; ``covs[0]`` is the lag-1 covariance."""
    covs = np.asarray(covs, dtype=np.float64)
    if k_max < 0 or covs.shape[0] < k_max:
        raise ConfigurationError(f"need at least k_max={k_max} covariances, got {covs.shape[0]}")
    return float(var0 + 2.0 * np.sum(covs[:k_max]))
