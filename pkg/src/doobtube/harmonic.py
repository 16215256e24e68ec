"""Lattice discretisation of the tube and the discrete harmonic function h.

Nodes live on ``a + delta * Z`` along the axis and ``delta * Z^(d-1)`` across.
Layer 0 (axis == a) is the closed end, layer ``M`` is the far wall, which is
the first lattice layer at or beyond the ladder checkpoint ``s_N``.

h solves the discrete Dirichlet problem with h = 0 on the lateral wall and
closed end and h = 1 on the far wall.  It grows roughly like
``exp(pi/2 * int dv/f)`` along the tube, so values are stored per layer as
``mantissa * exp(log_scale[layer])``; only neighbour ratios are ever used.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import linalg

from .errors import DomainError, ResolutionError, SolverError
from .geometry import Point, WidthProfile, contains_many, ladder

INTERIOR, FAR_WALL, LATERAL, CLOSED_END = 0, 1, 2, 3
KIND_NAMES = {INTERIOR: "Interior", FAR_WALL: "FarWall", LATERAL: "Lateral", CLOSED_END: "ClosedEnd"}

# direction layout: 0 axis+, 1 axis-, then (cross_c+, cross_c-) for each cross axis c
AXIS_UP, AXIS_DOWN = 0, 1

_LAYER_EPS = 1e-9


def _layer_at_or_above(profile_a, delta, s):
    return int(math.ceil((s - profile_a) / delta - _LAYER_EPS))


@dataclass(eq=False)
class TubeGrid:
    profile: WidthProfile
    delta: float
    d: int
    s0: float
    n_far: int
    min_width_cells: int
    ladder_values: np.ndarray = field(repr=False)
    layer_axis: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)
    cross_index: np.ndarray = field(repr=False)
    node_layer: np.ndarray = field(repr=False)
    node_kind: np.ndarray = field(repr=False)
    nbr: np.ndarray = field(repr=False)
    nbr_kind: np.ndarray = field(repr=False)
    section_layer: np.ndarray = field(repr=False)

    @property
    def n_layers(self):
        """Index of the far-wall layer."""
        return len(self.layer_axis) - 1

    @property
    def n_nodes(self):
        return len(self.node_layer)

    @property
    def n_interior(self):
        return int(self.offsets[-2] - self.offsets[1])

    @property
    def time_step(self):
        return self.delta * self.delta / self.d

    @property
    def far_wall_axis(self):
        return float(self.layer_axis[-1])

    def layer_nodes(self, j):
        return np.arange(self.offsets[j], self.offsets[j + 1])

    def layer_size(self, j):
        return int(self.offsets[j + 1] - self.offsets[j])

    def node_point(self, node):
        node = int(node)
        cross = self.cross_index[node] * self.delta
        return Point(tuple(cross) + (float(self.layer_axis[self.node_layer[node]]),))

    def find_node(self, p: Point):
        """Global index of the lattice node at exactly ``p`` (or None)."""
        j = (p.axis - self.profile.a) / self.delta
        jr = int(round(j))
        cross = np.asarray(p.cross) / self.delta
        cr = np.rint(cross).astype(np.int64)
        if abs(j - jr) > 1e-9 or np.any(np.abs(cross - cr) > 1e-9):
            return None
        if not 1 <= jr <= self.n_layers:
            return None
        nodes = self.layer_nodes(jr)
        hit = np.all(self.cross_index[nodes] == cr, axis=1)
        idx = np.flatnonzero(hit)
        return int(nodes[idx[0]]) if len(idx) else None

    def snap(self, p: Point):
        """Nearest interior node to ``p``; returns (node, distance)."""
        if p.d != self.d:
            raise DomainError(f"point has dimension {p.d}, grid has {self.d}")
        j = int(round((p.axis - self.profile.a) / self.delta))
        j = min(max(j, 1), self.n_layers - 1)
        nodes = self.layer_nodes(j)
        cross = self.cross_index[nodes] * self.delta
        dist2 = np.sum((cross - np.asarray(p.cross)) ** 2, axis=1) + (self.layer_axis[j] - p.axis) ** 2
        best = int(np.argmin(dist2))
        return int(nodes[best]), float(math.sqrt(dist2[best]))

    def fingerprint(self):
        payload = {
            "profile": self.profile.to_dict(),
            "delta": self.delta,
            "d": self.d,
            "s0": self.s0,
            "n_far": self.n_far,
            "min_width_cells": self.min_width_cells,
        }
        blob = json.dumps(payload, sort_keys=True, default=str).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _cross_candidates(radius_cells, dim):
    r = int(math.floor(radius_cells)) + 1
    rng = np.arange(-r, r + 1)
    if dim == 1:
        return rng[:, None]
    grids = np.meshgrid(*([rng] * dim), indexing="ij")
    return np.stack([g.ravel() for g in grids], axis=1)


def build_grid(profile: WidthProfile, delta: float, N: int, s0: float, d: int = 2,
               min_width_cells: int = 8) -> TubeGrid:
    """Lattice points of the tube between the closed end and the far wall at ``s_N``."""
    if not delta > 0:
        raise DomainError("delta must be > 0")
    if d not in (2, 3):
        raise DomainError("only d = 2 or d = 3 grids are supported")
    if N < 1:
        raise DomainError("far-wall ladder index N must be >= 1")
    lad = ladder(profile, s0, N + 1)
    s_n = float(lad[N])
    if s_n >= profile.b:
        raise DomainError(f"ladder reaches b={profile.b} before index N={N}")
    a = profile.a
    M = _layer_at_or_above(a, delta, s_n)
    if M < 2:
        raise ResolutionError(f"delta={delta} leaves no interior layer below s_N={s_n}")
    layer_axis = a + np.arange(M + 1) * delta
    if layer_axis[-1] >= profile.b:
        raise DomainError("far-wall layer falls outside the support")
    widths = profile(layer_axis[1:])
    bad = np.flatnonzero(widths < min_width_cells * delta)
    if len(bad):
        v = float(layer_axis[1 + bad[0]])
        raise ResolutionError(
            f"tube half-width f({v:g})={float(profile(v)):g} is below "
            f"min_width_cells*delta={min_width_cells * delta:g} at axis value {v:g}",
            axis_value=v,
        )

    dim = d - 1
    per_layer = [np.zeros((0, dim), dtype=np.int64)]
    for j in range(1, M + 1):
        cand = _cross_candidates(widths[j - 1] / delta, dim)
        mask = contains_many(profile, cand * delta, layer_axis[j])
        per_layer.append(cand[mask].astype(np.int64))

    sizes = np.array([len(c) for c in per_layer])
    offsets = np.concatenate([[0], np.cumsum(sizes)])
    cross_index = np.concatenate(per_layer[1:], axis=0)
    n = len(cross_index)
    node_layer = np.repeat(np.arange(M + 1), sizes).astype(np.int64)
    node_kind = np.where(node_layer == M, FAR_WALL, INTERIOR).astype(np.int8)

    off = int(np.max(np.abs(cross_index))) + 2 if n else 2
    width = 2 * off + 1
    weights = width ** np.arange(dim, dtype=np.int64)
    keys_all = (cross_index + off) @ weights
    # nodes are generated in lexicographic (i_0 major) order; sort keys for lookup
    sorted_keys, sorted_pos = [], []
    for j in range(M + 1):
        k = keys_all[offsets[j]:offsets[j + 1]]
        order = np.argsort(k, kind="stable")
        sorted_keys.append(k[order])
        sorted_pos.append(order + offsets[j])

    def lookup(j, keys):
        sk = sorted_keys[j]
        if len(sk) == 0:
            return np.full(len(keys), -1, dtype=np.int64)
        pos = np.searchsorted(sk, keys)
        pos_c = np.minimum(pos, len(sk) - 1)
        found = sk[pos_c] == keys
        return np.where(found, sorted_pos[j][pos_c], -1)

    nbr = np.full((n, 2 * d), -1, dtype=np.int64)
    nbr_kind = np.full((n, 2 * d), LATERAL, dtype=np.int8)
    for j in range(1, M):
        lo, hi = offsets[j], offsets[j + 1]
        keys = keys_all[lo:hi]
        up = lookup(j + 1, keys)
        nbr[lo:hi, AXIS_UP] = up
        nbr_kind[lo:hi, AXIS_UP] = np.where(up >= 0, FAR_WALL if j + 1 == M else INTERIOR, LATERAL)
        if j == 1:
            nbr_kind[lo:hi, AXIS_DOWN] = CLOSED_END
        else:
            down = lookup(j - 1, keys)
            nbr[lo:hi, AXIS_DOWN] = down
            nbr_kind[lo:hi, AXIS_DOWN] = np.where(down >= 0, INTERIOR, LATERAL)
        for c in range(dim):
            for sgn, col in ((1, 2 + 2 * c), (-1, 3 + 2 * c)):
                side = lookup(j, keys + sgn * weights[c])
                nbr[lo:hi, col] = side
                nbr_kind[lo:hi, col] = np.where(side >= 0, INTERIOR, LATERAL)

    section_layer = np.array([_layer_at_or_above(a, delta, s) for s in lad.values], dtype=np.int64)
    return TubeGrid(
        profile=profile, delta=float(delta), d=d, s0=float(s0), n_far=int(N),
        min_width_cells=int(min_width_cells), ladder_values=lad.values.copy(),
        layer_axis=layer_axis, offsets=offsets, cross_index=cross_index,
        node_layer=node_layer, node_kind=node_kind, nbr=nbr, nbr_kind=nbr_kind,
        section_layer=section_layer,
    )


@dataclass(eq=False)
class HarmonicField:
    grid: TubeGrid
    mantissa: np.ndarray = field(repr=False)
    log_scale: np.ndarray = field(repr=False)
    anchor: int
    residual: float
    sweeps: int
    residual_history: list
    _table: tuple = field(default=None, repr=False)

    def log_h(self, nodes=None):
        nodes = slice(None) if nodes is None else nodes
        return np.log(self.mantissa[nodes]) + self.log_scale[self.grid.node_layer[nodes]]

    def h(self, nodes=None):
        return np.exp(self.log_h(nodes))

    def neighbor_ratios(self):
        """(n, 2d) array of h(y)/h(x), zero where y is a killing boundary."""
        g = self.grid
        lh = self.log_h()
        alive = (g.nbr_kind == INTERIOR) | (g.nbr_kind == FAR_WALL)
        safe = np.where(alive, g.nbr, 0)
        ratios = np.where(alive, np.exp(lh[safe] - lh[:, None]), 0.0)
        ratios[g.node_kind == FAR_WALL] = 0.0
        return ratios

    def residuals(self):
        """Relative harmonicity defect |h(x) - mean_y h(y)| / h(x) per interior node."""
        g = self.grid
        r = np.abs(1.0 - self.neighbor_ratios().sum(axis=1) / (2 * g.d))
        return r[g.node_kind == INTERIOR]

    def layer_log_max(self):
        g = self.grid
        out = np.full(g.n_layers + 1, -np.inf)
        for j in range(1, g.n_layers + 1):
            m = self.mantissa[g.offsets[j]:g.offsets[j + 1]]
            out[j] = self.log_scale[j] + math.log(m.max())
        return out

    def transition_table(self):
        """Cumulative Doob step probabilities and targets used by the sampler.

        Rows are renormalised by their sum (which equals one up to the solver
        residual) so sampling is exactly stochastic; killing neighbours keep
        probability exactly zero.
        """
        if self._table is None:
            g = self.grid
            p = self.neighbor_ratios()
            s = p.sum(axis=1, keepdims=True)
            interior = g.node_kind == INTERIOR
            p[interior] /= s[interior]
            cum = np.cumsum(p, axis=1)
            last = np.where(p > 0, np.arange(p.shape[1]), -1).max(axis=1)
            cols = np.arange(p.shape[1])[None, :]
            cum = np.where(cols >= last[:, None], 1.0, cum)
            nbr = np.where(p > 0, g.nbr, -1)
            self._table = (np.ascontiguousarray(cum), np.ascontiguousarray(nbr))
        return self._table

    def fingerprint(self):
        hsh = hashlib.sha256()
        hsh.update(self.grid.fingerprint().encode())
        hsh.update(np.ascontiguousarray(self.mantissa).tobytes())
        hsh.update(np.ascontiguousarray(self.log_scale).tobytes())
        hsh.update(str(self.anchor).encode())
        return hsh.hexdigest()[:16]


def _layer_couplings(grid, j):
    """Local lateral pairs, down- and up-neighbour local indices for layer j."""
    lo, hi = grid.offsets[j], grid.offsets[j + 1]
    nb = grid.nbr[lo:hi]
    kind = grid.nbr_kind[lo:hi]
    n = hi - lo
    rows, cols = [], []
    for c in range(2, 2 * grid.d):
        m = kind[:, c] == INTERIOR
        rows.append(np.flatnonzero(m))
        cols.append(nb[m, c] - lo)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    down = np.where(kind[:, AXIS_DOWN] == INTERIOR, nb[:, AXIS_DOWN] - grid.offsets[j - 1], -1)
    up = np.where(kind[:, AXIS_UP] != LATERAL, nb[:, AXIS_UP] - grid.offsets[j + 1], -1)
    return n, rows, cols, down, up


def _march(grid):
    """Block-tridiagonal elimination from the closed end, then back-substitution.

    ``R_j`` maps layer j+1 values to layer j values (h_j = R_j h_{j+1}); each
    Schur complement is symmetric positive definite, so Cholesky is used.
    """
    M = grid.n_layers
    two_d = 2.0 * grid.d
    Rs = [None] * M
    prev = None
    for j in range(1, M):
        n, rows, cols, down, up = _layer_couplings(grid, j)
        S = np.zeros((n, n))
        S[np.arange(n), np.arange(n)] = two_d
        S[rows, cols] -= 1.0
        if prev is not None:
            m = down >= 0
            S[m] -= prev[down[m]]
        n_up = grid.layer_size(j + 1)
        U = np.zeros((n, n_up))
        mu = up >= 0
        U[np.flatnonzero(mu), up[mu]] = 1.0
        R = linalg.cho_solve(linalg.cho_factor(S, check_finite=False), U, check_finite=False)
        Rs[j] = R
        prev = R

    mantissa = np.empty(grid.n_nodes)
    log_scale = np.zeros(M + 1)
    v = np.ones(grid.layer_size(M))
    mantissa[grid.offsets[M]:] = v
    for j in range(M - 1, 0, -1):
        w = Rs[j] @ v
        Rs[j] = None
        if not np.all(w > 0):
            raise SolverError(f"non-positive harmonic values in layer {j}")
        scale = math.sqrt(w.max() * w.min())
        v = w / scale
        mantissa[grid.offsets[j]:grid.offsets[j + 1]] = v
        log_scale[j] = log_scale[j + 1] + math.log(scale)
    return mantissa, log_scale


@numba.njit(cache=True, nogil=True)
def _gauss_seidel_sweep(m, nbr, kind, layer, log_scale, n_first, n_last, two_d):
    for x in range(n_first, n_last):
        lx = layer[x]
        acc = 0.0
        for c in range(nbr.shape[1]):
            k = kind[x, c]
            if k == 0 or k == 1:
                y = nbr[x, c]
                acc += m[y] * math.exp(log_scale[layer[y]] - log_scale[lx])
        m[x] = acc / two_d


def solve_h(grid: TubeGrid, tol: float = 1e-10, anchor: Point | None = None,
            max_sweeps: int = 200) -> HarmonicField:
    """Discrete harmonic h: 0 on lateral wall and closed end, 1 on the far wall.

    Layers are eliminated slab by slab; if the harmonicity residual still
    exceeds ``tol`` the field is relaxed by Gauss-Seidel sweeps (in the
    log-scaled representation) until it does, or ``max_sweeps`` is hit.
    The result is normalised so that h(anchor) = 1.
    """
    mantissa, log_scale = _march(grid)
    fld = HarmonicField(grid, mantissa, log_scale, anchor=-1, residual=math.nan,
                        sweeps=0, residual_history=[])
    res = float(fld.residuals().max()) if grid.n_interior else 0.0
    history = [res]
    sweeps = 0
    first, last = int(grid.offsets[1]), int(grid.offsets[-2])
    while res > tol and sweeps < max_sweeps:
        _gauss_seidel_sweep(mantissa, grid.nbr, grid.nbr_kind, grid.node_layer, log_scale,
                            first, last, 2.0 * grid.d)
        sweeps += 1
        res = float(fld.residuals().max())
        history.append(res)
    if res > tol:
        raise SolverError(
            f"harmonicity residual {res:.3e} > tol {tol:.1e} after {sweeps} relaxation sweeps",
            residual_history=history,
        )

    if anchor is None:
        anchor = Point((0.0,) * (grid.d - 1) + (grid.s0,))
    node, _ = grid.snap(anchor)
    log_scale = log_scale - (math.log(mantissa[node]) + log_scale[grid.node_layer[node]])
    fld.log_scale = log_scale
    fld.anchor = node
    fld.residual = res
    fld.sweeps = sweeps
    fld.residual_history = history
    return fld


def doob_step_distribution(fld: HarmonicField, node) -> np.ndarray:
    """Probabilities h(y) / (2d h(x)) of moving to each of the 2d neighbours."""
    g = fld.grid
    if isinstance(node, Point):
        found = g.find_node(node)
        if found is None:
            raise DomainError(f"{node} is not a lattice node of the grid")
        node = found
    node = int(node)
    if not 0 <= node < g.n_nodes or g.node_kind[node] != INTERIOR:
        raise DomainError(f"node {node} is not an interior node")
    lh = fld.log_h()
    out = np.zeros(2 * g.d)
    for c in range(2 * g.d):
        if g.nbr_kind[node, c] in (INTERIOR, FAR_WALL):
            out[c] = math.exp(lh[g.nbr[node, c]] - lh[node]) / (2 * g.d)
    return out


def dense_reference_h(grid: TubeGrid) -> np.ndarray:
    """Unscaled h from one dense linear solve (test oracle, small grids only)."""
    if grid.n_interior > 5000:
        raise DomainError("dense reference solve is limited to small grids")
    first, last = int(grid.offsets[1]), int(grid.offsets[-2])
    n = last - first
    A = np.eye(n) * (2.0 * grid.d)
    rhs = np.zeros(n)
    for x in range(first, last):
        for c in range(2 * grid.d):
            k = grid.nbr_kind[x, c]
            if k == INTERIOR:
                A[x - first, grid.nbr[x, c] - first] -= 1.0
            elif k == FAR_WALL:
                rhs[x - first] += 1.0
    h = np.ones(grid.n_nodes)
    h[first:last] = np.linalg.solve(A, rhs)
    return h


def layer_growth_rows(fld: HarmonicField):
    """Rows (axis_value, layer_log_growth, layer_node_count) for layers 1..M.

    Growth is the change of log(max h) per unit axial length between
    consecutive layers; blank for the first layer.
    """
    g = fld.grid
    lm = fld.layer_log_max()
    rows = []
    for j in range(1, g.n_layers + 1):
        growth = (lm[j] - lm[j - 1]) / g.delta if j >= 2 else math.nan
        rows.append((float(g.layer_axis[j]), growth, g.layer_size(j)))
    return rows
