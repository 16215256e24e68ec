"""Doob-conditioned lattice walks.

Each path draws its uniforms from its own PCG64 stream seeded by
``SeedSequence(base_seed, spawn_key=(path_index,))``, so a batch is a pure
function of (field, start, base_seed) no matter how paths are scheduled.
Time is continuum time: steps * delta**2 / d.
"""
from __future__ import annotations

import hashlib
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .errors import BudgetError, DomainError
from .geometry import Point
from .harmonic import HarmonicField, _layer_at_or_above

DEFAULT_MAX_STEPS = 10**9
_CHUNK0 = 8192
_CHUNK_MAX = 1 << 17

WORKERS_ENV = "DOOBTUBE_WORKERS"


def default_workers():
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def substream(base_seed: int, *key: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(base_seed), spawn_key=tuple(int(k) for k in key))


@numba.njit(cache=True, nogil=True)
def _advance(state, uniforms, cum, nbr, node_layer, far_layer, sec_lo, sec_hi, hits):
    # state = [node, steps, max_layer, done]
    node = state[0]
    steps = state[1]
    max_layer = state[2]
    last = cum.shape[1] - 1
    for t in range(uniforms.shape[0]):
        u = uniforms[t]
        c = 0
        while c < last and u >= cum[node, c]:
            c += 1
        node = nbr[node, c]
        steps += 1
        lay = node_layer[node]
        if lay > max_layer:
            max_layer = lay
            for k in range(sec_lo[lay], sec_hi[lay]):
                hits[k] = steps
            if lay == far_layer:
                state[3] = 1
                break
    state[0] = node
    state[1] = steps
    state[2] = max_layer


@numba.njit(cache=True, nogil=True)
def _advance_pair(state, u1, u2, cum, nbr, node_layer, far_layer, depth_layers, reached):
    # state = [node1, node2, steps, max1, max2, meet_step, done]
    n1 = state[0]
    n2 = state[1]
    steps = state[2]
    m1 = state[3]
    m2 = state[4]
    last = cum.shape[1] - 1
    deepest = depth_layers[depth_layers.shape[0] - 1]
    for t in range(u1.shape[0]):
        if node_layer[n1] != far_layer:
            c = 0
            while c < last and u1[t] >= cum[n1, c]:
                c += 1
            n1 = nbr[n1, c]
        if node_layer[n2] != far_layer:
            c = 0
            while c < last and u2[t] >= cum[n2, c]:
                c += 1
            n2 = nbr[n2, c]
        steps += 1
        l1 = node_layer[n1]
        l2 = node_layer[n2]
        if l1 > m1:
            m1 = l1
        if l2 > m2:
            m2 = l2
        both = min(m1, m2)
        for i in range(depth_layers.shape[0]):
            if reached[i] < 0 and both >= depth_layers[i]:
                reached[i] = steps
        if abs(l1 - l2) <= 1:
            state[5] = steps
            state[6] = 1
            break
        if both >= deepest:
            state[6] = 1
            break
    state[0] = n1
    state[1] = n2
    state[2] = steps
    state[3] = m1
    state[4] = m2


@dataclass
class PathRecord:
    start: Point
    snap_distance: float
    steps: int
    lifetime: float
    section_hits: np.ndarray = field(repr=False)  # hit time per ladder index, nan if start lies above
    end_reason: str = "ReachedFarWall"
    rng_substream_id: tuple = ()

    def hits(self):
        """(k, T(Lambda_{s_k})) pairs for sections at or above the start."""
        ks = np.flatnonzero(~np.isnan(self.section_hits))
        return [(int(k), float(self.section_hits[k])) for k in ks]


@dataclass(eq=False)
class BatchResult:
    profile_fingerprint: str
    grid_fingerprint: str
    field_fingerprint: str
    base_seed: int
    start: Point
    snap_distance: float
    time_step: float
    ladder_values: np.ndarray = field(repr=False)
    steps: np.ndarray = field(repr=False)
    hit_steps: np.ndarray = field(repr=False)  # (n_paths, N+1), -1 where undefined
    wall_time: float = 0.0
    workers: int = 1

    @property
    def n_paths(self):
        return len(self.steps)

    @property
    def start_axis(self):
        return self.start.axis

    @property
    def lifetimes(self):
        return self.steps * self.time_step

    def hit_times(self, k_list=None):
        hs = self.hit_steps if k_list is None else self.hit_steps[:, np.asarray(k_list, dtype=int)]
        return np.where(hs >= 0, hs * self.time_step, np.nan)

    def record(self, i):
        return PathRecord(
            start=self.start, snap_distance=self.snap_distance, steps=int(self.steps[i]),
            lifetime=float(self.lifetimes[i]), section_hits=self.hit_times()[i],
            rng_substream_id=(self.base_seed, i),
        )

    def content_hash(self):
        h = hashlib.sha256()
        for part in (self.field_fingerprint, str(self.base_seed), repr(self.start.coords)):
            h.update(part.encode())
        h.update(np.ascontiguousarray(self.steps).tobytes())
        h.update(np.ascontiguousarray(self.hit_steps).tobytes())
        return h.hexdigest()[:16]


def _section_ranges(grid):
    M = grid.n_layers
    sl = grid.section_layer
    lo = np.searchsorted(sl, np.arange(M + 1), side="left").astype(np.int64)
    hi = np.searchsorted(sl, np.arange(M + 1), side="right").astype(np.int64)
    return lo, hi


def _resolve_start(fld, start):
    if isinstance(start, (int, np.integer)):
        node = int(start)
        return node, fld.grid.node_point(node), 0.0
    if not isinstance(start, Point):
        start = Point(tuple(start))
    node, dist = fld.grid.snap(start)
    return node, fld.grid.node_point(node), dist


def _walk(fld, node, seq, max_steps, sec_lo, sec_hi, hits):
    g = fld.grid
    cum, nbr = fld.transition_table()
    start_layer = int(g.node_layer[node])
    hits[:] = -1
    hits[sec_lo[start_layer]:sec_hi[start_layer]] = 0
    state = np.array([node, 0, start_layer, 0], dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(seq))
    chunk = _CHUNK0
    while True:
        n = min(chunk, max_steps - int(state[1]))
        if n <= 0:
            raise BudgetError(f"step budget {max_steps} exhausted before the far wall")
        _advance(state, rng.random(n), cum, nbr, g.node_layer, g.n_layers, sec_lo, sec_hi, hits)
        if state[3]:
            return int(state[1])
        chunk = min(2 * chunk, _CHUNK_MAX)


def run_walk(fld: HarmonicField, start, substream_seq, max_steps: int = DEFAULT_MAX_STEPS) -> PathRecord:
    """One conditioned walk from ``start`` (snapped to the nearest interior node) to the far wall."""
    if isinstance(substream_seq, tuple):
        substream_seq = substream(*substream_seq)
    node, snapped, dist = _resolve_start(fld, start)
    sec_lo, sec_hi = _section_ranges(fld.grid)
    hits = np.empty(len(fld.grid.ladder_values), dtype=np.int64)
    steps = _walk(fld, node, substream_seq, max_steps, sec_lo, sec_hi, hits)
    dt = fld.grid.time_step
    return PathRecord(
        start=snapped, snap_distance=dist, steps=steps, lifetime=steps * dt,
        section_hits=np.where(hits >= 0, hits * dt, np.nan),
        rng_substream_id=tuple(substream_seq.spawn_key),
    )


def _blocks(n, workers):
    edges = np.linspace(0, n, min(workers, n) + 1).astype(int)
    return [(int(lo), int(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi > lo]


def run_batch(fld: HarmonicField, start, n_paths: int, base_seed: int, workers: int | None = None,
              max_steps: int = DEFAULT_MAX_STEPS) -> BatchResult:
    """``n_paths`` independent walks; path i uses ``substream(base_seed, i)``."""
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    workers = default_workers() if workers is None else max(1, int(workers))
    node, snapped, dist = _resolve_start(fld, start)
    g = fld.grid
    sec_lo, sec_hi = _section_ranges(g)
    fld.transition_table()
    steps = np.zeros(n_paths, dtype=np.int64)
    hit_steps = np.full((n_paths, len(g.ladder_values)), -1, dtype=np.int64)
    failures = {}

    def work(lo, hi):
        for i in range(lo, hi):
            try:
                steps[i] = _walk(fld, node, substream(base_seed, i), max_steps, sec_lo, sec_hi, hit_steps[i])
            except BudgetError as exc:
                failures[i] = str(exc)

    t0 = time.perf_counter()
    blocks = _blocks(n_paths, workers)
    if len(blocks) == 1:
        work(*blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            for fut in [pool.submit(work, lo, hi) for lo, hi in blocks]:
                fut.result()
    if failures:
        first = min(failures)
        raise BudgetError(
            f"{len(failures)} path(s) exceeded the step budget, first at path index {first}: "
            f"{failures[first]}", path_index=first,
        )
    return BatchResult(
        profile_fingerprint=g.profile.fingerprint(), grid_fingerprint=g.fingerprint(),
        field_fingerprint=fld.fingerprint(), base_seed=int(base_seed), start=snapped,
        snap_distance=dist, time_step=g.time_step, ladder_values=g.ladder_values.copy(),
        steps=steps, hit_steps=hit_steps, wall_time=time.perf_counter() - t0, workers=workers,
    )


@dataclass
class CouplingRecord:
    met: bool
    meeting_time: float  # inf when the walks never met before the deepest level
    depths: tuple
    met_before: tuple  # per depth: met before both walks reached it


@dataclass(eq=False)
class CouplingResult:
    depths: np.ndarray
    met_before: np.ndarray = field(repr=False)  # (n_pairs, n_depths) bool
    meeting_times: np.ndarray = field(repr=False)
    start1: Point = None
    start2: Point = None
    base_seed: int = 0

    @property
    def n_pairs(self):
        return len(self.meeting_times)

    def fractions(self):
        return self.met_before.mean(axis=0)


def _pair(fld, n1, n2, seqs, depth_layers, max_steps):
    g = fld.grid
    cum, nbr = fld.transition_table()
    reached = np.full(len(depth_layers), -1, dtype=np.int64)
    l1, l2 = int(g.node_layer[n1]), int(g.node_layer[n2])
    if abs(l1 - l2) <= 1:
        return 0, reached
    for i, dl in enumerate(depth_layers):
        if min(l1, l2) >= dl:
            reached[i] = 0
    state = np.array([n1, n2, 0, l1, l2, -1, 0], dtype=np.int64)
    r1 = np.random.Generator(np.random.PCG64(seqs[0]))
    r2 = np.random.Generator(np.random.PCG64(seqs[1]))
    chunk = _CHUNK0
    while not state[6]:
        n = min(chunk, max_steps - int(state[2]))
        if n <= 0:
            raise BudgetError(f"step budget {max_steps} exhausted in coupled pair")
        _advance_pair(state, r1.random(n), r2.random(n), cum, nbr, g.node_layer, g.n_layers,
                      depth_layers, reached)
        chunk = min(2 * chunk, _CHUNK_MAX)
    return int(state[5]), reached


def _depth_layers(fld, starts, depths):
    g = fld.grid
    depths = np.atleast_1d(np.asarray(depths, dtype=float))
    if np.any(np.diff(depths) <= 0):
        raise DomainError("coupling depths must be strictly increasing")
    for p in starts:
        if p.axis >= depths[0]:
            raise DomainError(f"start axis {p.axis} is not below the first depth {depths[0]}")
    layers = np.array([_layer_at_or_above(g.profile.a, g.delta, u) for u in depths], dtype=np.int64)
    if layers[-1] >= g.n_layers:
        raise DomainError(f"depth {depths[-1]} is not below the far wall at {g.far_wall_axis}")
    return depths, layers


def run_coupled_pair(fld: HarmonicField, start1, start2, substreams, depth,
                     max_steps: int = DEFAULT_MAX_STEPS) -> CouplingRecord:
    """Two independent, step-synchronised walks; they meet when their axial
    coordinates come within one lattice spacing of each other."""
    n1, p1, _ = _resolve_start(fld, start1)
    n2, p2, _ = _resolve_start(fld, start2)
    depths, layers = _depth_layers(fld, (p1, p2), depth)
    seqs = [s if isinstance(s, np.random.SeedSequence) else substream(*s) for s in substreams]
    meet, reached = _pair(fld, n1, n2, seqs, layers, max_steps)
    met_before = tuple(bool(meet >= 0 and (r < 0 or meet <= r)) for r in reached)
    dt = fld.grid.time_step
    return CouplingRecord(
        met=meet >= 0, meeting_time=meet * dt if meet >= 0 else math.inf,
        depths=tuple(depths.tolist()), met_before=met_before,
    )


def run_coupling_batch(fld: HarmonicField, start1, start2, n_pairs: int, base_seed: int, depths,
                       workers: int | None = None, max_steps: int = DEFAULT_MAX_STEPS) -> CouplingResult:
    """Pair i uses substreams ``(base_seed, i, 0)`` and ``(base_seed, i, 1)``."""
    if n_pairs < 1:
        raise DomainError("n_pairs must be >= 1")
    workers = default_workers() if workers is None else max(1, int(workers))
    n1, p1, _ = _resolve_start(fld, start1)
    n2, p2, _ = _resolve_start(fld, start2)
    depths, layers = _depth_layers(fld, (p1, p2), depths)
    fld.transition_table()
    met_before = np.zeros((n_pairs, len(depths)), dtype=bool)
    meet_steps = np.full(n_pairs, -1, dtype=np.int64)

    def work(lo, hi):
        for i in range(lo, hi):
            seqs = (substream(base_seed, i, 0), substream(base_seed, i, 1))
            meet, reached = _pair(fld, n1, n2, seqs, layers, max_steps)
            meet_steps[i] = meet
            met_before[i] = (meet >= 0) & ((reached < 0) | (meet <= reached))

    blocks = _blocks(n_pairs, workers)
    if len(blocks) == 1:
        work(*blocks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(blocks)) as pool:
            for fut in [pool.submit(work, lo, hi) for lo, hi in blocks]:
                fut.result()
    dt = fld.grid.time_step
    return CouplingResult(
        depths=depths, met_before=met_before,
        meeting_times=np.where(meet_steps >= 0, meet_steps * dt, np.inf),
        start1=p1, start2=p2, base_seed=int(base_seed),
    )
