"""Scenario files, the solve -> simulate -> analyse pipeline and its outputs.

A scenario is a YAML mapping.  Unknown keys are rejected, every default is
filled in on load, and ``dump_scenario`` writes the canonical form (the
config hash is taken over that text).  ``run_experiment`` writes each
stage's output atomically as soon as the stage finishes, so a failing
analysis never touches files written by earlier stages.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import tempfile
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .classifier import Regime, classify, integrate_between
from .errors import DoobTubeError, ValidationError
from .geometry import Point, WidthProfile, ladder
from .harmonic import build_grid, layer_growth_rows, solve_h
from .simulator import run_batch, run_coupling_batch
from .stats import (CI_LEVEL, DECREASE_FACTOR, GROWTH_FACTOR, MIN_ANTICONCENTRATION_PATHS,
                    N_RESAMPLES, anticoncentration, clock_convergence, moment_estimate,
                    moment_ratios, start_insensitivity, sup_variance_decay)

DEFAULT_MARGIN = 20
MOMENT_BAND = 10.0
ANTICONCENTRATION_DROP = 0.5
COUPLING_TARGET = 0.95

_ANALYSES = ("moments", "anticoncentration", "clock", "coupling", "start_insensitivity", "sup_variance")

# key -> default; None marks a required key
_TOP = {
    "name": "scenario",
    "profile": None,
    "dimension": 2,
    "delta": None,
    "s0": "auto",
    "far_index": None,
    "margin": DEFAULT_MARGIN,
    "min_width_cells": 8,
    "solver_tol": 1e-10,
    "measure_indices": [],
    "start": "auto",
    "n_paths": 1000,
    "seed": 0,
    "output_dir": None,
}
_SECTIONS = {
    "moments": {"k_list": "measure"},
    "anticoncentration": {"window": 1.0, "k_list": "measure"},
    "clock": {"k_list": "measure"},
    "coupling": {"start1": None, "start2": None, "depths": None, "n_pairs": 1000},
    "start_insensitivity": {"starts": None, "u": None, "n_paths": 2000},
    "sup_variance": {"start_axes": None, "u": None, "n_paths": 2000},
}


@dataclass(frozen=True)
class Scenario:
    name: str
    profile: WidthProfile
    dimension: int
    delta: float
    s0: float
    far_index: int
    margin: int
    min_width_cells: int
    solver_tol: float
    measure_indices: tuple
    start: tuple
    n_paths: int
    seed: int
    output_dir: str | None = None
    moments: dict | None = None
    anticoncentration: dict | None = None
    clock: dict | None = None
    coupling: dict | None = None
    start_insensitivity: dict | None = None
    sup_variance: dict | None = None

    def to_dict(self):
        d = {
            "name": self.name,
            "profile": self.profile.to_dict(),
            "dimension": self.dimension,
            "delta": self.delta,
            "s0": self.s0,
            "far_index": self.far_index,
            "margin": self.margin,
            "min_width_cells": self.min_width_cells,
            "solver_tol": self.solver_tol,
            "measure_indices": list(self.measure_indices),
            "start": list(self.start),
            "n_paths": self.n_paths,
            "seed": self.seed,
            "output_dir": self.output_dir,
        }
        for key in _ANALYSES:
            d[key] = _plain(getattr(self, key))
        return d

    @property
    def enabled(self):
        return [k for k in _ANALYSES if getattr(self, k) is not None]

    @property
    def config_hash(self):
        return hashlib.sha256(dump_scenario(self).encode()).hexdigest()[:16]

    def with_overrides(self, **kw):
        return replace(self, **kw)


def _plain(x):
    if isinstance(x, dict):
        return {k: _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    return x


def _num(x, cast, key, problems):
    try:
        if isinstance(x, bool):
            raise TypeError
        v = cast(x)
        if cast is int and v != x:
            raise TypeError
        return v
    except (TypeError, ValueError):
        problems.append(f"{key} must be {'an integer' if cast is int else 'a number'}, got {x!r}")
        return None


def _int_list(x, key, problems):
    if not isinstance(x, (list, tuple)):
        problems.append(f"{key} must be a list of integers")
        return ()
    out = [_num(v, int, key, problems) for v in x]
    return tuple(v for v in out if v is not None)


def _point(x, d, key, problems):
    if not isinstance(x, (list, tuple)) or len(x) != d:
        problems.append(f"{key} must be a list of {d} coordinates")
        return None
    vals = [_num(v, float, key, problems) for v in x]
    return None if None in vals else tuple(vals)


def scenario_from_dict(raw: dict) -> Scenario:
    """Validate a raw mapping; every problem found is reported at once."""
    if not isinstance(raw, dict):
        raise ValidationError("scenario must be a mapping")
    problems = []
    allowed = set(_TOP) | set(_SECTIONS)
    for key in sorted(set(raw) - allowed):
        problems.append(f"unknown key {key!r}")
    for key, default in _TOP.items():
        if default is None and key not in ("output_dir",) and raw.get(key) is None:
            problems.append(f"missing required key {key!r}")
    if problems:
        raise ValidationError(problems)

    cfg = {k: raw.get(k, v) for k, v in _TOP.items()}
    try:
        profile = WidthProfile.from_dict(cfg["profile"]) if isinstance(cfg["profile"], dict) else None
        if profile is None:
            problems.append("profile must be a mapping")
    except ValidationError as exc:
        profile = None
        problems.extend(f"profile: {p}" for p in exc.problems)
    except (TypeError, ValueError) as exc:
        profile = None
        problems.append(f"profile: {exc}")

    d = _num(cfg["dimension"], int, "dimension", problems)
    if d is not None and d not in (2, 3):
        problems.append("dimension must be 2 or 3")
        d = None
    delta = _num(cfg["delta"], float, "delta", problems)
    if delta is not None and not delta > 0:
        problems.append("delta must be > 0")
    N = _num(cfg["far_index"], int, "far_index", problems)
    margin = _num(cfg["margin"], int, "margin", problems)
    if margin is not None and margin < 0:
        problems.append("margin must be >= 0")
    mwc = _num(cfg["min_width_cells"], int, "min_width_cells", problems)
    tol = _num(cfg["solver_tol"], float, "solver_tol", problems)
    n_paths = _num(cfg["n_paths"], int, "n_paths", problems)
    if n_paths is not None and n_paths < 1:
        problems.append("n_paths must be >= 1")
    seed = _num(cfg["seed"], int, "seed", problems)
    if seed is not None and seed < 0:
        problems.append("seed must be >= 0")
    measure = _int_list(cfg["measure_indices"], "measure_indices", problems)
    out_dir = cfg["output_dir"]
    if out_dir is not None and not isinstance(out_dir, str):
        problems.append("output_dir must be a string or null")

    s0 = cfg["s0"]
    if profile is not None and s0 == "auto":
        # one unit (or half the support) inside the closed end
        s0 = profile.a + min(1.0, (profile.b - profile.a) / 2)
    elif s0 != "auto":
        s0 = _num(s0, float, "s0", problems)
    else:
        s0 = None
    if profile is not None and s0 is not None and not profile.a < s0 < profile.b:
        problems.append(f"s0={s0} outside the support ({profile.a}, {profile.b})")
        s0 = None

    start = None
    if d is not None:
        if cfg["start"] == "auto":
            start = (0.0,) * (d - 1) + (s0,) if s0 is not None else None
        else:
            start = _point(cfg["start"], d, "start", problems)

    lad = None
    if profile is not None and s0 is not None and N is not None:
        if N < 1:
            problems.append("far_index must be >= 1")
        else:
            lad = ladder(profile, s0, N + 1).values
            if lad[N] >= profile.b:
                problems.append(f"ladder reaches b={profile.b} before far_index={N}")
                lad = None
    limit = None if (N is None or margin is None) else N - margin
    far_axis = None if (lad is None or limit is None or limit < 0) else float(lad[limit])

    def check_indices(ks, key):
        if limit is None:
            return
        for k in ks:
            if not 0 <= k < limit:
                problems.append(f"{key}: ladder index {k} must lie in [0, far_index - margin) = [0, {limit})")

    def check_depth(u, key):
        if u is not None and far_axis is not None and not u < far_axis:
            problems.append(f"{key}: depth {u} must lie below s_(far_index - margin) = {far_axis:.6g}")

    check_indices(measure, "measure_indices")
    if start is not None and lad is not None and measure:
        below = [k for k in measure if lad[k] < start[-1]]
        if below:
            problems.append(f"measure_indices {below} lie below the start axis {start[-1]}")

    sections = {}
    for name, spec in _SECTIONS.items():
        val = raw.get(name)
        if val is None or val is False:
            sections[name] = None
            continue
        if val is True:
            val = {}
        if not isinstance(val, dict):
            problems.append(f"{name} must be a mapping, true, or null")
            continue
        for key in sorted(set(val) - set(spec)):
            problems.append(f"unknown key {name}.{key!r}")
        sec = {}
        for key, default in spec.items():
            v = val.get(key, default)
            if v is None:
                problems.append(f"missing required key {name}.{key}")
                continue
            sec[key] = v
        sections[name] = sec

    for name in ("moments", "anticoncentration", "clock"):
        sec = sections.get(name)
        if sec is None or "k_list" not in sec:
            continue
        ks = measure if sec["k_list"] == "measure" else _int_list(sec["k_list"], f"{name}.k_list", problems)
        sec["k_list"] = list(ks)
        check_indices(ks, f"{name}.k_list")
        if start is not None and lad is not None:
            below = [k for k in ks if 0 <= k < len(lad) and lad[k] < start[-1]]
            if below:
                problems.append(f"{name}.k_list {below} lie below the start axis {start[-1]}")
        if name == "moments" and len(ks) < 2:
            problems.append("moments.k_list needs at least 2 indices")
        if name == "anticoncentration" and len(ks) < 1:
            problems.append("anticoncentration.k_list needs at least 1 index")
        if name == "clock" and (len(ks) < 3 or any(b <= a for a, b in zip(ks, ks[1:]))):
            problems.append("clock.k_list must be increasing with at least 3 indices")
    if sections.get("anticoncentration"):
        sec = sections["anticoncentration"]
        w = _num(sec.get("window"), float, "anticoncentration.window", problems)
        if w is not None and not w > 0:
            problems.append("anticoncentration.window must be > 0")
        sec["window"] = w
    if sections.get("coupling") and d is not None:
        sec = sections["coupling"]
        for key in ("start1", "start2"):
            if key in sec:
                sec[key] = _point(sec[key], d, f"coupling.{key}", problems)
        if "depths" in sec:
            depths = sec["depths"] if isinstance(sec["depths"], list) else [sec["depths"]]
            depths = [_num(x, float, "coupling.depths", problems) for x in depths]
            sec["depths"] = [x for x in depths if x is not None]
            if any(b <= a for a, b in zip(sec["depths"], sec["depths"][1:])):
                problems.append("coupling.depths must be increasing")
            for u in sec["depths"]:
                check_depth(u, "coupling.depths")
        sec["n_pairs"] = _num(sec.get("n_pairs"), int, "coupling.n_pairs", problems)
    if sections.get("start_insensitivity") and d is not None:
        sec = sections["start_insensitivity"]
        if "starts" in sec:
            pts = sec["starts"] if isinstance(sec["starts"], list) else []
            if not pts:
                problems.append("start_insensitivity.starts must be a non-empty list of points")
            sec["starts"] = [_point(p, d, "start_insensitivity.starts", problems) for p in pts]
        if "u" in sec:
            sec["u"] = _num(sec["u"], float, "start_insensitivity.u", problems)
            check_depth(sec["u"], "start_insensitivity.u")
        sec["n_paths"] = _num(sec.get("n_paths"), int, "start_insensitivity.n_paths", problems)
    if sections.get("sup_variance"):
        sec = sections["sup_variance"]
        if "start_axes" in sec:
            axes = sec["start_axes"] if isinstance(sec["start_axes"], list) else []
            if not axes:
                problems.append("sup_variance.start_axes must be a non-empty list")
            sec["start_axes"] = [_num(x, float, "sup_variance.start_axes", problems) for x in axes]
        if "u" in sec:
            sec["u"] = _num(sec["u"], float, "sup_variance.u", problems)
            check_depth(sec["u"], "sup_variance.u")
        sec["n_paths"] = _num(sec.get("n_paths"), int, "sup_variance.n_paths", problems)

    if problems:
        raise ValidationError(problems)
    return Scenario(
        name=str(cfg["name"]), profile=profile, dimension=d, delta=delta, s0=float(s0),
        far_index=N, margin=margin, min_width_cells=mwc, solver_tol=tol,
        measure_indices=tuple(measure), start=tuple(start), n_paths=n_paths, seed=seed,
        output_dir=out_dir, **sections,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"scenario file not found: {path}")
    with open(path) as fh:
        raw = yaml.safe_load(fh)
    return scenario_from_dict(raw or {})


def dump_scenario(scn: Scenario) -> str:
    """Canonical YAML text: fixed key order, every default explicit."""
    return yaml.safe_dump(scn.to_dict(), sort_keys=False, default_flow_style=None)


# ---------------------------------------------------------------- output

def _fmt(x):
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return "" if math.isnan(x) else repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def _atomic_write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_csv(path, header, rows, comments=()):
    buf = io.StringIO()
    for line in comments:
        buf.write(f"# {line}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        values = [row[h] for h in header] if isinstance(row, dict) else row
        w.writerow([_fmt(v) for v in values])
    _atomic_write(Path(path), buf.getvalue())


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return None
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    return x


def write_json(path, obj):
    _atomic_write(Path(path), json.dumps(_jsonable(obj), indent=2) + "\n")


# ---------------------------------------------------------------- report

THRESHOLDS = {
    "ci_level": CI_LEVEL,
    "n_resamples": N_RESAMPLES,
    "clock_decrease_factor": DECREASE_FACTOR,
    "clock_growth_factor": GROWTH_FACTOR,
    "moment_band": MOMENT_BAND,
    "anticoncentration_drop": ANTICONCENTRATION_DROP,
    "anticoncentration_min_paths": MIN_ANTICONCENTRATION_PATHS,
    "coupling_target": COUPLING_TARGET,
}


@dataclass
class ExperimentReport:
    scenario: str
    status: str = "ok"
    stage: str | None = None
    error: str | None = None
    profile: dict = field(default_factory=dict)
    regime: dict | None = None
    solver: dict | None = None
    lifetime: dict | None = None
    analyses: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    flags: list = field(default_factory=list)
    thresholds: dict = field(default_factory=lambda: dict(THRESHOLDS))
    provenance: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)

    @property
    def ok(self):
        return self.status == "ok"

    def to_dict(self):
        return _jsonable({
            "scenario": self.scenario, "status": self.status, "stage": self.stage,
            "error": self.error, "profile": self.profile, "regime": self.regime,
            "solver": self.solver, "lifetime": self.lifetime, "analyses": self.analyses,
            "verdicts": self.verdicts, "flags": self.flags, "thresholds": self.thresholds,
            "provenance": self.provenance, "outputs": self.outputs,
        })


def _moments_verdict(table):
    lo_m, hi_m = table.mean_ratio_range
    lo_v, hi_v = table.var_ratio_range
    ok = lo_m > 0 and lo_v > 0 and hi_m / lo_m < MOMENT_BAND and hi_v / lo_v < MOMENT_BAND
    return "bounded" if ok else "unbounded"


def _anticoncentration_rows(batch, ks, window):
    return [{"k": int(k), "u": float(batch.ladder_values[k]), "window": window,
             "max_window_probability": anticoncentration(batch, int(k), window)} for k in ks]


def _anticoncentration_trend(rows):
    if len(rows) < 2:
        return "single-depth"
    first, last = rows[0]["max_window_probability"], rows[-1]["max_window_probability"]
    return "spreading" if last < ANTICONCENTRATION_DROP * first else "concentrated"


def _coupling_verdict(fr):
    increasing = all(b >= a for a, b in zip(fr, fr[1:]))
    if fr[-1] >= COUPLING_TARGET and increasing:
        return "coupled"
    return "inconclusive"


def _lifetime_block(scn, regime, grid, batch):
    est = moment_estimate(batch.lifetimes, seed=scn.seed) if batch.n_paths >= 2 else None
    out = {"far_wall_axis": grid.far_wall_axis, "n_paths": batch.n_paths,
           "mean": float(batch.lifetimes.mean()),
           "estimate": est.to_dict() if est else None}
    if regime.regime is Regime.FINITE_LIFETIME:
        # mass of f beyond the far wall bounds the lifetime the truncation cuts off
        start = batch.start_axis
        tail = integrate_between(scn.profile, 1, grid.far_wall_axis, scn.profile.b)
        body = integrate_between(scn.profile, 1, start, grid.far_wall_axis)
        out["tail_integral_f"] = tail
        out["tail_lifetime_bound"] = out["mean"] * tail / body if body > 0 else math.nan
    return out


def run_experiment(scn: Scenario, out_dir=None, workers=None, seed=None) -> ExperimentReport:
    """classify -> build_grid -> solve_h -> run_batch -> enabled analyses.

    Outputs go to ``out_dir`` (or the scenario's output_dir; nothing is
    written when both are None).  Errors are caught, tagged with the stage
    that raised them and returned in the report; report.json is written
    either way.
    """
    if seed is not None:
        scn = scn.with_overrides(seed=int(seed))
    out = Path(out_dir) if out_dir is not None else (Path(scn.output_dir) if scn.output_dir else None)
    t0 = time.perf_counter()
    rep = ExperimentReport(scenario=scn.name, profile={**scn.profile.to_dict(), "label": scn.profile.label})
    rep.provenance = {"artifact_version": __version__, "config_hash": scn.config_hash,
                      "seed": scn.seed, "workers": workers, "wall_time_s": None}
    stage = "classify"

    def emit(name, header, rows, comments=()):
        if out is not None:
            write_csv(out / name, header, rows, comments)
            rep.outputs.append(name)

    try:
        regime = classify(scn.profile)
        rep.regime = regime.to_dict()
        if regime.regime is Regime.FINITE_LIFETIME:
            rep.flags.append("FiniteLifetime")

        stage = "build_grid"
        grid = build_grid(scn.profile, scn.delta, scn.far_index, scn.s0, scn.dimension,
                          scn.min_width_cells)
        stage = "solve_h"
        fld = solve_h(grid, tol=scn.solver_tol)
        growth = layer_growth_rows(fld)
        lm = fld.layer_log_max()
        rep.solver = {
            "residual": fld.residual, "sweeps": fld.sweeps, "residual_history": fld.residual_history,
            "n_nodes": grid.n_nodes, "n_layers": grid.n_layers, "far_wall_axis": grid.far_wall_axis,
            "time_step": grid.time_step, "grid_fingerprint": grid.fingerprint(),
            "field_fingerprint": fld.fingerprint(),
        }
        emit("h_layers.csv", ["layer", "axis_value", "log_max_h", "layer_log_growth", "layer_node_count"],
             [(j + 1, ax, lm[j + 1], gr, n) for j, (ax, gr, n) in enumerate(growth)],
             [f"grid_fingerprint={grid.fingerprint()}", f"field_fingerprint={fld.fingerprint()}"])

        stage = "run_batch"
        batch = run_batch(fld, Point(scn.start), scn.n_paths, scn.seed, workers)
        rep.lifetime = _lifetime_block(scn, regime, grid, batch)
        ks = list(scn.measure_indices)
        times = batch.hit_times(ks) if ks else np.empty((batch.n_paths, 0))
        emit("paths.csv", ["path_index", "lifetime"] + [f"T_k{k}" for k in ks],
             [(i, batch.lifetimes[i], *times[i]) for i in range(batch.n_paths)],
             [f"profile_fingerprint={batch.profile_fingerprint}",
              f"grid_fingerprint={batch.grid_fingerprint}",
              f"field_fingerprint={batch.field_fingerprint}",
              f"base_seed={batch.base_seed}", f"start={list(batch.start.coords)}",
              f"snap_distance={batch.snap_distance!r}", f"time_step={batch.time_step!r}",
              "sections=" + ",".join(f"k{k}:u={float(batch.ladder_values[k])!r}" for k in ks)])

        if scn.moments is not None:
            stage = "moments"
            tab = moment_ratios(batch, scn.profile, scn.moments["k_list"])
            rep.analyses["moments"] = tab.to_dict()
            rep.verdicts["moments"] = _moments_verdict(tab)
            emit("moments.csv", list(tab.rows[0].keys()), tab.rows)

        if scn.anticoncentration is not None:
            stage = "anticoncentration"
            rows = _anticoncentration_rows(batch, scn.anticoncentration["k_list"],
                                           scn.anticoncentration["window"])
            trend = _anticoncentration_trend(rows)
            rep.analyses["anticoncentration"] = {"rows": rows, "trend": trend}
            rep.verdicts["anticoncentration"] = trend
            emit("anticoncentration.csv", list(rows[0].keys()), rows)

        if scn.clock is not None:
            stage = "clock"
            clk = clock_convergence(batch, scn.clock["k_list"])
            rep.analyses["clock"] = clk.to_dict()
            rep.verdicts["clock"] = clk.verdict
            rows = clk.rows()
            emit("clock.csv", list(rows[0].keys()), rows)

        if scn.coupling is not None:
            stage = "coupling"
            c = scn.coupling
            res = run_coupling_batch(fld, Point(c["start1"]), Point(c["start2"]), c["n_pairs"],
                                     scn.seed, c["depths"], workers)
            fr = res.fractions().tolist()
            rows = [{"depth": float(u), "met_fraction": f, "n_pairs": res.n_pairs}
                    for u, f in zip(res.depths, fr)]
            rep.analyses["coupling"] = {"start1": list(res.start1.coords), "start2": list(res.start2.coords),
                                        "rows": rows}
            rep.verdicts["coupling"] = _coupling_verdict(fr)
            emit("coupling.csv", ["depth", "met_fraction", "n_pairs"], rows)

        if scn.start_insensitivity is not None:
            stage = "start_insensitivity"
            c = scn.start_insensitivity
            si = start_insensitivity(fld, [Point(p) for p in c["starts"]], c["u"], c["n_paths"],
                                     scn.seed, workers)
            rep.analyses["start_insensitivity"] = si.to_dict()
            rep.verdicts["start_insensitivity"] = (
                "insensitive" if si.max_difference < si.reference_scale else "sensitive")
            emit("start_insensitivity.csv",
                 ["start_index", "axis", "u", "k", "mean_T", "max_difference", "max_difference_lo",
                  "max_difference_hi", "reference_scale"],
                 [(i, si.axis, si.u, si.k, m, si.max_difference, *si.max_difference_ci, si.reference_scale)
                  for i, m in enumerate(si.means)])

        if scn.sup_variance is not None:
            stage = "sup_variance"
            c = scn.sup_variance
            sv = sup_variance_decay(fld, c["start_axes"], c["u"], c["n_paths"], scn.seed, workers)
            rep.analyses["sup_variance"] = sv.to_dict()
            rep.verdicts["sup_variance"] = {True: "decreasing", False: "not-decreasing",
                                            None: "single-start"}[sv.strictly_decreasing]
            emit("sup_variance.csv", list(sv.rows[0].keys()), sv.rows)
    except (DoobTubeError, ValueError, ArithmeticError) as exc:
        if isinstance(exc, DoobTubeError):
            exc.stage = stage
        rep.status = "error"
        rep.stage = stage
        rep.error = f"{type(exc).__name__}: {exc}"

    rep.flags.extend(f"inconclusive:{k}" for k, v in rep.verdicts.items() if v == "inconclusive")
    rep.provenance["wall_time_s"] = time.perf_counter() - t0
    if out is not None:
        rep.outputs.append("report.json")
        write_json(out / "report.json", rep.to_dict())
    return rep


# ---------------------------------------------------------------- comparison

_EXPECTED = {Regime.INFINITE_HOMOGENEOUS.value: "homogeneous", Regime.INFINITE_CLOCK.value: "clock"}
DICHOTOMY_COLUMNS = ["scenario", "profile", "beta", "integral_f", "integral_f3", "regime",
                     "clock_verdict", "anticoncentration_trend", "finite_lifetime", "concordant", "status"]


def dichotomy_row(rep: ExperimentReport) -> dict:
    reg = rep.regime or {}
    verdict = rep.verdicts.get("clock")
    expected = _EXPECTED.get(reg.get("regime"))
    return {
        "scenario": rep.scenario,
        "profile": rep.profile.get("label"),
        "beta": rep.profile.get("exponent") if rep.profile.get("kind") == "power" else None,
        "integral_f": reg.get("integral_f"),
        "integral_f3": reg.get("integral_f3"),
        "regime": reg.get("regime"),
        "clock_verdict": verdict,
        "anticoncentration_trend": rep.verdicts.get("anticoncentration"),
        "finite_lifetime": "FiniteLifetime" in rep.flags,
        "concordant": None if (verdict is None or expected is None) else verdict == expected,
        "status": rep.status,
    }


def compare_regimes(scenarios, out_dir=None, workers=None, seed=None, concurrent=1):
    """Run every scenario and tabulate the dichotomy, one row each.

    Each scenario writes into ``out_dir/<name>``; the table goes to
    ``out_dir/dichotomy.csv``.  Returns (rows, reports).
    """
    scenarios = list(scenarios)
    out = Path(out_dir) if out_dir is not None else None

    def one(scn):
        sub = out / scn.name if out is not None else None
        return run_experiment(scn, sub, workers, seed)

    if concurrent > 1 and len(scenarios) > 1:
        with ThreadPoolExecutor(max_workers=concurrent) as pool:
            reports = list(pool.map(one, scenarios))
    else:
        reports = [one(s) for s in scenarios]
    rows = [dichotomy_row(r) for r in reports]
    if out is not None:
        write_csv(out / "dichotomy.csv", DICHOTOMY_COLUMNS, rows)
    return rows, reports
