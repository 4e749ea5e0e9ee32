"""Reproducible Brownian driver paths on a uniform time grid.

Every random quantity is drawn from a Philox stream whose key is
``(master_seed, replication_id)`` and whose counter block is
``(particle index, stream tag)``.  A driver ``w_k`` therefore depends only on
``(master_seed, replication_id, k)`` and never on the index range it was
requested with, which is what makes pad-doubling and coupling comparisons
bit-exact.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

_MASK64 = (1 << 64) - 1

# stream tags (fourth counter word)
TAG_DRIVER = 0
TAG_FLOW_BRIDGE = 1
TAG_GAP_MAX = 2
TAG_GAP_MIN = 3
TAG_REFINE = 16  # + refinement level


class ConfigurationError(ValueError):
    """Raised for invalid grids, index ranges or experiment settings."""


@dataclass(frozen=True)
class TimeGrid:
    T: float
    M: int

    def __post_init__(self):
        if not (isinstance(self.T, (int, float)) and math.isfinite(self.T) and self.T > 0):
            raise ConfigurationError(f"T must be a positive finite number, got {self.T!r}")
        if int(self.M) != self.M or self.M < 1:
            raise ConfigurationError(f"M must be a positive integer, got {self.M!r}")
        object.__setattr__(self, "T", float(self.T))
        object.__setattr__(self, "M", int(self.M))

    @property
    def dt(self) -> float:
        return self.T / self.M

    @property
    def times(self) -> np.ndarray:
        t = np.arange(self.M + 1, dtype=np.float64) * self.dt
        t[-1] = self.T
        return t

    def index_of(self, t: float) -> int:
        """Grid index of ``t``; raises if ``t`` is not a grid time."""
        x = t / self.dt
        i = int(round(x))
        if i < 0 or i > self.M or abs(x - i) > 1e-9 * max(1.0, abs(x)):
            raise ConfigurationError(f"time {t!r} is not on the grid (T={self.T}, M={self.M})")
        return i


def make_grid(T: float, M: int) -> TimeGrid:
    return TimeGrid(T, M)


@dataclass(frozen=True)
class DrivingEnsemble:
    """Driver paths ``paths[k - index_lo, i] = w_k(t_i)``."""

    index_lo: int
    index_hi: int
    paths: np.ndarray
    grid: TimeGrid
    seed_record: tuple[int, int]
    level: int = 0
    frozen: bool = field(default=False, compare=False)

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.index_lo, self.index_hi + 1)

    def path(self, k: int) -> np.ndarray:
        if not self.index_lo <= k <= self.index_hi:
            raise ConfigurationError(f"driver {k} outside [{self.index_lo}, {self.index_hi}]")
        return self.paths[k - self.index_lo]

    def restrict(self, lo: int, hi: int) -> "DrivingEnsemble":
        if lo > hi or lo < self.index_lo or hi > self.index_hi:
            raise ConfigurationError(
                f"[{lo}, {hi}] not inside ensemble range [{self.index_lo}, {self.index_hi}]"
            )
        return DrivingEnsemble(lo, hi, self.paths[lo - self.index_lo: hi - self.index_lo + 1],
                               self.grid, self.seed_record, self.level, self.frozen)


def _u64(*words: int) -> np.ndarray:
    return np.array([w & _MASK64 for w in words], dtype=np.uint64)


def stream(master_seed: int, replication_id: int, k: int, tag: int) -> np.random.Generator:
    """Independent generator for one (seed, replication, particle, tag) cell."""
    bitgen = np.random.Philox(key=_u64(master_seed, replication_id), counter=_u64(0, 0, k, tag))
    return np.random.Generator(bitgen)


class _Streams:
    """Re-keys one Philox instance per cell; same draws as :func:`stream`, cheaper."""

    def __init__(self, master_seed: int, replication_id: int):
        self._bitgen = np.random.Philox(key=_u64(master_seed, replication_id))
        self._gen = np.random.Generator(self._bitgen)
        self._state = self._bitgen.state
        self._counter = np.zeros(4, dtype=np.uint64)
        self._state["state"]["counter"] = self._counter

    def __call__(self, k: int, tag: int) -> np.random.Generator:
        st = self._state
        self._counter[2] = k & _MASK64
        self._counter[3] = tag & _MASK64
        st["buffer_pos"] = 4
        st["has_uint32"] = 0
        st["uinteger"] = 0
        self._bitgen.state = st
        return self._gen


@lru_cache(maxsize=8)
def cells_for(master_seed: int, replication_id: int) -> _Streams:
    """Shared per-replication stream factory (draws are position independent)."""
    return _Streams(master_seed, replication_id)


def sample_driving(index_lo: int, index_hi: int, grid: TimeGrid, master_seed: int,
                   replication_id: int) -> DrivingEnsemble:
    if index_lo > index_hi:
        raise ConfigurationError(f"index_lo={index_lo} exceeds index_hi={index_hi}")
    n = index_hi - index_lo + 1
    paths = np.empty((n, grid.M + 1), dtype=np.float64)
    cells = cells_for(master_seed, replication_id)
    for row, k in enumerate(range(index_lo, index_hi + 1)):
        cells(k, TAG_DRIVER).standard_normal(out=paths[row, 1:])
    paths[:, 0] = np.arange(index_lo, index_hi + 1)
    paths[:, 1:] *= math.sqrt(grid.dt)
    np.cumsum(paths, axis=1, out=paths)
    return DrivingEnsemble(index_lo, index_hi, paths, grid, (master_seed, replication_id))


def frozen_ensemble(index_lo: int, index_hi: int, grid: TimeGrid) -> DrivingEnsemble:
    """Zero-noise ensemble ``w_k == k``; handy for deterministic checks."""
    paths = np.repeat(np.arange(index_lo, index_hi + 1, dtype=np.float64)[:, None],
                      grid.M + 1, axis=1)
    return DrivingEnsemble(index_lo, index_hi, paths, grid, (0, 0), frozen=True)


def ensemble_from_paths(index_lo: int, paths, grid: TimeGrid) -> DrivingEnsemble:
    """Wrap user-supplied paths (e.g. hand-built test cases)."""
    paths = np.asarray(paths, dtype=np.float64)
    if paths.ndim != 2 or paths.shape[1] != grid.M + 1:
        raise ConfigurationError(f"paths must have shape (n, {grid.M + 1}), got {paths.shape}")
    return DrivingEnsemble(index_lo, index_lo + paths.shape[0] - 1, paths, grid, (0, 0))


def refine(ensemble: DrivingEnsemble) -> DrivingEnsemble:
    """Halve ``dt`` by inserting Brownian-bridge midpoints.

    The coarse grid values are kept, so estimates at ``M`` and ``2M`` use
    common random numbers.
    """
    if ensemble.frozen:
        grid = TimeGrid(ensemble.grid.T, 2 * ensemble.grid.M)
        return frozen_ensemble(ensemble.index_lo, ensemble.index_hi, grid)
    seed, rep = ensemble.seed_record
    M = ensemble.grid.M
    grid = TimeGrid(ensemble.grid.T, 2 * M)
    half_sd = 0.5 * math.sqrt(ensemble.grid.dt)
    fine = np.empty((ensemble.paths.shape[0], 2 * M + 1))
    fine[:, 0::2] = ensemble.paths
    cells = cells_for(seed, rep)
    for row, k in enumerate(range(ensemble.index_lo, ensemble.index_hi + 1)):
        z = cells(k, TAG_REFINE + ensemble.level).standard_normal(M)
        w = ensemble.paths[row]
        fine[row, 1::2] = 0.5 * (w[:-1] + w[1:]) + half_sd * z
    return DrivingEnsemble(ensemble.index_lo, ensemble.index_hi, fine, grid,
                           ensemble.seed_record, ensemble.level + 1)


def uniforms(master_seed: int, replication_id: int, index_lo: int, index_hi: int,
             tag: int, size: int) -> np.ndarray:
    """``(n_indices, size)`` uniforms from the per-index streams under ``tag``."""
    out = np.empty((index_hi - index_lo + 1, size))
    cells = cells_for(master_seed, replication_id)
    for row, k in enumerate(range(index_lo, index_hi + 1)):
        out[row] = cells(k, tag).random(size)
    return out


def bridge_crossing_prob(d0: float, d1: float, sigma2: float, dt: float) -> float:
    """Probability that a Brownian bridge with endpoint gaps ``d0``, ``d1`` to a
    barrier touches it within one step of length ``dt``."""
    if d0 < 0 or d1 < 0:
        raise ValueError(f"distances to the barrier must be nonnegative, got {d0}, {d1}")
    if sigma2 <= 0 or dt <= 0:
        raise ValueError("sigma2 and dt must be positive")
    x = -2.0 * d0 * d1 / (sigma2 * dt)
    if x < -700.0:
        return 0.0
    return math.exp(x)
