"""Coalescing flow maps ``F_n``, ``F_n^+`` and ``F_n^-`` on a time grid.

Clusters move with their representative's driver increments scaled by
``1/sqrt(mass)``.  A collision is declared at the first grid index where two
adjacent clusters touch or cross; the merged cluster continues from the
position of the cluster that holds the new representative.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Literal

import numba
import numpy as np

from .rng_paths import (
    TAG_FLOW_BRIDGE,
    ConfigurationError,
    DrivingEnsemble,
    TimeGrid,
    uniforms,
)

Variant = Literal["full", "plus", "minus"]
VARIANTS = ("full", "plus", "minus")


@dataclass(frozen=True)
class MergeEvent:
    grid_index: int
    left_cluster: int  # leftmost member of the leftmost merging cluster
    right_cluster: int  # leftmost member of the rightmost merging cluster
    new_mass: int
    new_representative: int


@dataclass(frozen=True)
class Cluster:
    lo: int
    hi: int
    mass: int
    representative: int


@dataclass(frozen=True)
class FlowRealization:
    domain: tuple[int, int]
    positions: np.ndarray  # (n_particles, M + 1)
    mass_profile: np.ndarray  # (n_particles, M + 1), int32
    events: tuple[MergeEvent, ...]
    grid: TimeGrid
    variant: str
    anchor: int
    seed_record: tuple[int, int] = (0, 0)

    @property
    def indices(self) -> np.ndarray:
        return np.arange(self.domain[0], self.domain[1] + 1)

    def path(self, k: int) -> np.ndarray:
        return self.positions[self._row(k)]

    def _row(self, k: int) -> int:
        lo, hi = self.domain
        if not lo <= k <= hi:
            raise ConfigurationError(f"particle {k} outside flow domain [{lo}, {hi}]")
        return k - lo

    def clusters_at(self, i: int) -> list[Cluster]:
        """Partition of the domain into clusters at grid index ``i``."""
        x = self.positions[:, i]
        m = self.mass_profile[:, i]
        lo = self.domain[0]
        out = []
        start = 0
        n = x.shape[0]
        for r in range(1, n + 1):
            if r == n or x[r] != x[start]:
                members = (lo + start, lo + r - 1)
                out.append(Cluster(members[0], members[1], int(m[start]),
                                   representative_of(members, self.domain, self.variant, self.anchor)))
                start = r
        return out


def default_anchor(domain: tuple[int, int], variant: Variant) -> int:
    lo, hi = domain
    if variant == "plus":
        return lo
    if variant == "minus":
        return hi
    return (lo + hi) // 2


def representative_of(members: tuple[int, int], domain: tuple[int, int], variant: Variant,
                      anchor: int | None = None) -> int:
    """Member closest to the map's origin (component index of minimal modulus)."""
    a, b = members
    if a > b:
        raise ValueError("empty member set")
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    if variant != "full" or anchor is None:
        anchor = default_anchor(domain, variant)
    return min(max(anchor, a), b)


@numba.njit(cache=True)
def _evolve(W, anchor, bridge, U, dt, X, mass, ev):  # pragma: no cover - jitted
    n, m1 = W.shape
    lo = np.arange(n)
    hi = np.arange(n)
    m = np.ones(n, dtype=np.int64)
    rep = np.arange(n)
    pos = W[:, 0].copy()
    prev_pos = pos.copy()
    nxt = np.arange(1, n + 1)
    nxt[n - 1] = -1
    prv = np.arange(-1, n - 1)
    fresh = np.zeros(n, dtype=np.bool_)
    right_end = np.zeros(n, dtype=np.int64)
    inv = np.empty(n + 1)
    inv[0] = 0.0
    for j in range(1, n + 1):
        inv[j] = 1.0 / np.sqrt(j)
    n_ev = 0
    for i in range(m1):
        if i > 0:
            c = 0
            while c != -1:
                prev_pos[c] = pos[c]
                r = rep[c]
                pos[c] += (W[r, i] - W[r, i - 1]) * inv[m[c]]
                c = nxt[c]
        c = 0
        while c != -1:
            d = nxt[c]
            if d == -1:
                break
            hit = pos[c] >= pos[d]
            if (not hit) and bridge and i > 0 and (not fresh[c]) and (not fresh[d]):
                g0 = prev_pos[d] - prev_pos[c]
                g1 = pos[d] - pos[c]
                s2 = 1.0 / m[c] + 1.0 / m[d]
                hit = U[lo[d], i] < np.exp(-2.0 * g0 * g1 / (s2 * dt))
            if hit:
                if abs(rep[d] - anchor) < abs(rep[c] - anchor):
                    rep[c] = rep[d]
                    pos[c] = pos[d]
                if fresh[d]:
                    right_end[c] = right_end[d]
                else:
                    right_end[c] = d
                fresh[c] = True
                fresh[d] = False
                hi[c] = hi[d]
                m[c] += m[d]
                nxt[c] = nxt[d]
                if nxt[d] != -1:
                    prv[nxt[d]] = c
                if prv[c] != -1:
                    c = prv[c]
                continue
            c = d
        c = 0
        while c != -1:
            if fresh[c]:
                ev[n_ev, 0] = i
                ev[n_ev, 1] = c
                ev[n_ev, 2] = right_end[c]
                ev[n_ev, 3] = m[c]
                ev[n_ev, 4] = rep[c]
                n_ev += 1
                fresh[c] = False
            for k in range(lo[c], hi[c] + 1):
                X[k, i] = pos[c]
                mass[k, i] = m[c]
            c = nxt[c]
    return n_ev


def apply_flow_map(ensemble: DrivingEnsemble, domain: tuple[int, int] | None = None,
                   variant: Variant = "full", anchor: int | None = None,
                   bridge: bool = False) -> FlowRealization:
    """Run the coalescing construction on the drivers of ``domain``.

    ``variant="plus"`` / ``"minus"`` pick the leftmost / rightmost member as
    representative (the one-sided maps); ``"full"`` picks the member closest to
    ``anchor`` (default: domain midpoint).  With ``bridge=True`` a merge is
    also triggered between grid points with the Brownian-bridge crossing
    probability of the gap process; clusters that already merged at the
    current step are only checked on the grid.
    """
    if variant not in VARIANTS:
        raise ConfigurationError(f"unknown variant {variant!r}")
    if domain is None:
        domain = (ensemble.index_lo, ensemble.index_hi)
    lo, hi = int(domain[0]), int(domain[1])
    if lo > hi or lo < ensemble.index_lo or hi > ensemble.index_hi:
        raise ConfigurationError(
            f"domain [{lo}, {hi}] not inside ensemble range [{ensemble.index_lo}, {ensemble.index_hi}]"
        )
    if variant != "full" or anchor is None:
        anchor = default_anchor((lo, hi), variant)
    W = np.ascontiguousarray(ensemble.paths[lo - ensemble.index_lo: hi - ensemble.index_lo + 1])
    n, m1 = W.shape
    if bridge:
        seed, rep = ensemble.seed_record
        U = uniforms(seed, rep, lo, hi, TAG_FLOW_BRIDGE, m1)
    else:
        U = np.zeros((1, 1))
    X = np.empty((n, m1))
    mass = np.empty((n, m1), dtype=np.int32)
    ev = np.empty((max(n - 1, 1), 5), dtype=np.int64)
    n_ev = _evolve(W, anchor - lo, bridge, U, ensemble.grid.dt, X, mass, ev)
    events = tuple(
        MergeEvent(int(e[0]), int(e[1]) + lo, int(e[2]) + lo, int(e[3]), int(e[4]) + lo)
        for e in ev[:n_ev]
    )
    return FlowRealization((lo, hi), X, mass, events, ensemble.grid, variant, int(anchor),
                           ensemble.seed_record)


def _time_index(flow: FlowRealization, t: float) -> int:
    if t < 0 or t > flow.grid.T * (1 + 1e-12):
        raise ConfigurationError(f"time {t} outside [0, {flow.grid.T}]")
    i = int(np.searchsorted(flow.grid.times, t * (1 + 1e-12), side="right")) - 1
    return min(max(i, 0), flow.grid.M)


def mass_at(flow: FlowRealization, k: int, t: float) -> int:
    """Mass ``m_k(t)`` as a right-continuous step function of time."""
    row = flow._row(k)
    return int(flow.mass_profile[row, _time_index(flow, t)])


def quadratic_variation(flow: FlowRealization, k: int, t: float) -> float:
    """``int_0^t ds / m_k(s)`` for the piecewise-constant grid mass profile."""
    row = flow._row(k)
    if t < 0 or t > flow.grid.T * (1 + 1e-12):
        raise ConfigurationError(f"time {t} outside [0, {flow.grid.T}]")
    times = flow.grid.times
    widths = np.clip(np.minimum(times[1:], t) - times[:-1], 0.0, None)
    return float(np.sum(widths / flow.mass_profile[row, :-1]))


def realized_quadratic_variation(flow: FlowRealization, k: int) -> float:
    inc = np.diff(flow.path(k))
    return float(inc @ inc)


def first_meeting_index(flow: FlowRealization, k: int, l: int) -> int | None:
    hit = np.flatnonzero(flow.path(k) == flow.path(l))
    return int(hit[0]) if hit.size else None


def stopped_cross_variation(flow: FlowRealization, k: int, l: int) -> float:
    """Sum of ``dx_k * dx_l`` over steps strictly before the first meeting index."""
    stop = first_meeting_index(flow, k, l)
    dk = np.diff(flow.path(k))
    dl = np.diff(flow.path(l))
    if stop is not None:
        dk, dl = dk[: stop - 1], dl[: stop - 1]
    return float(dk @ dl)


def check_structure(flow: FlowRealization) -> list[str]:
    """Exact structural checks; returns a list of violation messages."""
    problems = []
    X, m = flow.positions, flow.mass_profile
    lo = flow.domain[0]
    if not np.array_equal(X[:, 0], flow.indices.astype(float)):
        problems.append("X_k(0) != k")
    if np.any(np.diff(X, axis=0) < 0):
        problems.append("ordering violated")
    eq = np.diff(X, axis=0) == 0  # adjacent pairs equal, per grid index
    if np.any(eq[:, :-1] & ~eq[:, 1:]):
        problems.append("coalescence not permanent")
    if np.any(np.diff(m, axis=1) < 0) or np.any(m[:, 0] != 1):
        problems.append("mass profile not nondecreasing from 1")
    # clusters are runs of equal positions (contiguous by ordering); run sizes must
    # match the recorded masses
    n = X.shape[0]
    rows = np.arange(n)[:, None]
    new_run = np.ones(X.shape, dtype=bool)
    new_run[1:] = ~eq
    run_start = np.maximum.accumulate(np.where(new_run, rows, 0), axis=0)
    ends_run = np.ones(X.shape, dtype=bool)
    ends_run[:-1] = ~eq
    run_end = np.minimum.accumulate(np.where(ends_run, rows, n)[::-1], axis=0)[::-1]
    bad = np.flatnonzero(np.any(run_end - run_start + 1 != m, axis=0))
    if bad.size:
        problems.append(f"mass bookkeeping mismatch at i={int(bad[0])} (domain start {lo})")
    return problems
