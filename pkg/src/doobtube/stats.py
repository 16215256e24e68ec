"""Reductions of path batches into moment tables and regime verdicts.

All verdicts are trend/boundedness checks gated by bootstrap percentile
intervals; the thresholds used are returned with every report.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .classifier import Regime, classify, integrate_between
from .errors import DomainError, PreconditionError, StatisticalPowerError
from .geometry import Point, WidthProfile

N_RESAMPLES = 2000
CI_LEVEL = 0.95
DECREASE_FACTOR = 0.5
GROWTH_FACTOR = 2.0
MIN_ANTICONCENTRATION_PATHS = 1000
_BOOT_KEY = 0xB0075


def bootstrap_moments(columns, n_resamples=N_RESAMPLES, seed=0, batch=100):
    """Bootstrap replicates of column means and variances.

    Rows (paths) are resampled jointly, so statistics combining columns stay
    consistent.  Returns two (n_resamples, n_columns) arrays.
    """
    x = np.asarray(columns, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = x.shape[0]
    center = x.mean(axis=0)
    xc = x - center
    xc2 = xc * xc
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(_BOOT_KEY,)))
    means = np.empty((n_resamples, x.shape[1]))
    variances = np.empty_like(means)
    p = np.full(n, 1.0 / n)
    for lo in range(0, n_resamples, batch):
        hi = min(lo + batch, n_resamples)
        w = rng.multinomial(n, p, size=hi - lo).astype(float)
        m1 = w @ xc / n
        m2 = w @ xc2 / n
        means[lo:hi] = m1 + center
        variances[lo:hi] = (m2 - m1 * m1) * (n / (n - 1))
    return means, variances


def _interval(replicates, estimate):
    alpha = (1.0 - CI_LEVEL) / 2.0
    lo, hi = np.percentile(replicates, [100 * alpha, 100 * (1 - alpha)], axis=0)
    # percentile intervals can miss a skewed point estimate; widen to cover it
    return np.minimum(lo, estimate), np.maximum(hi, estimate)


@dataclass
class MomentEstimate:
    mean: float
    mean_ci: tuple
    variance: float
    variance_ci: tuple
    n_paths: int

    def to_dict(self):
        return asdict(self)


def moment_estimate(samples, n_resamples=N_RESAMPLES, seed=0) -> MomentEstimate:
    x = np.asarray(samples, dtype=float)
    if len(x) < 2:
        raise DomainError("need at least two samples for a variance")
    bm, bv = bootstrap_moments(x, n_resamples, seed)
    mean, var = float(x.mean()), float(x.var(ddof=1))
    mlo, mhi = _interval(bm[:, 0], mean)
    vlo, vhi = _interval(bv[:, 0], var)
    return MomentEstimate(mean, (float(mlo), float(mhi)), var, (float(vlo), float(vhi)), len(x))


@dataclass
class HitTimes:
    """Hitting times T(Lambda_{s_k}) for a set of ladder indices, one row per path."""

    k: np.ndarray
    u: np.ndarray
    times: np.ndarray
    start_axis: float
    seed: int = 0

    @property
    def n_paths(self):
        return self.times.shape[0]


def _as_hits(batch, k_list) -> HitTimes:
    k = np.asarray(list(k_list), dtype=int)
    if isinstance(batch, HitTimes):
        idx = [int(np.flatnonzero(batch.k == kk)[0]) for kk in k]
        return HitTimes(k, batch.u[idx], batch.times[:, idx], batch.start_axis, batch.seed)
    if batch.n_paths == 0:
        raise DomainError("empty batch")
    if np.any(k < 0) or np.any(k >= len(batch.ladder_values)):
        raise DomainError(f"ladder indices {k.tolist()} outside the measured range 0..{len(batch.ladder_values) - 1}")
    times = batch.hit_times(k)
    if np.isnan(times).any():
        bad = k[np.isnan(times).any(axis=0)]
        raise DomainError(f"ladder indices {bad.tolist()} lie below the start at axis {batch.start_axis}")
    return HitTimes(k, batch.ladder_values[k], times, batch.start_axis, batch.base_seed)


@dataclass
class MomentRatioTable:
    rows: list
    mean_ratio_range: tuple
    var_ratio_range: tuple

    def to_dict(self):
        return asdict(self)


def moment_ratios(batch, profile: WidthProfile, k_list, n_resamples=N_RESAMPLES) -> MomentRatioTable:
    """Mean T(Lambda_u) / int_start^u f and Var T(Lambda_u) / int_start^u f^3 per depth."""
    hits = _as_hits(batch, k_list)
    if hits.n_paths < 2:
        raise DomainError("moment ratios need at least two paths")
    bm, bv = bootstrap_moments(hits.times, n_resamples, hits.seed)
    means = hits.times.mean(axis=0)
    variances = hits.times.var(axis=0, ddof=1)
    mlo, mhi = _interval(bm, means)
    vlo, vhi = _interval(bv, variances)
    rows = []
    for i, (k, u) in enumerate(zip(hits.k, hits.u)):
        i1 = integrate_between(profile, 1, hits.start_axis, u)
        i3 = integrate_between(profile, 3, hits.start_axis, u)
        rows.append({
            "k": int(k), "u": float(u),
            "mean": float(means[i]), "mean_lo": float(mlo[i]), "mean_hi": float(mhi[i]),
            "var": float(variances[i]), "var_lo": float(vlo[i]), "var_hi": float(vhi[i]),
            "int_f": i1, "int_f3": i3,
            "mean_ratio": float(means[i] / i1) if i1 > 0 else math.nan,
            "var_ratio": float(variances[i] / i3) if i3 > 0 else math.nan,
        })
    mr = [r["mean_ratio"] for r in rows if math.isfinite(r["mean_ratio"])]
    vr = [r["var_ratio"] for r in rows if math.isfinite(r["var_ratio"])]
    return MomentRatioTable(
        rows,
        (min(mr), max(mr)) if mr else (math.nan, math.nan),
        (min(vr), max(vr)) if vr else (math.nan, math.nan),
    )


def max_window_probability(times, window):
    """sup_u of the empirical P(T in (u, u + window))."""
    if not window > 0:
        raise DomainError("window must be > 0")
    t = np.sort(np.asarray(times, dtype=float))
    ends = np.searchsorted(t, t + window, side="left")
    return float(np.max(ends - np.arange(len(t))) / len(t))


def anticoncentration(batch, k: int, window: float) -> float:
    """Largest fraction of paths whose T(Lambda_{s_k}) falls in one open window.

    The supremum over window positions is taken exactly (equivalent to the
    sliding histogram in the limit of vanishing bin width).
    """
    hits = _as_hits(batch, [k])
    if hits.n_paths < MIN_ANTICONCENTRATION_PATHS:
        raise StatisticalPowerError(
            f"anticoncentration needs >= {MIN_ANTICONCENTRATION_PATHS} paths, got {hits.n_paths}")
    return max_window_probability(hits.times[:, 0], window)


@dataclass
class ClockReport:
    k: list
    u: list
    g: list
    total_var: list
    total_var_ci: list
    increment_var: list
    increment_var_ci: list
    split_total_msq: list
    split_increment_msq: list
    verdict: str
    thresholds: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def rows(self):
        out = []
        for i, k in enumerate(self.k):
            inc = i - 1
            out.append({
                "k": k, "u": self.u[i], "g": self.g[i],
                "var_t_plus_g": self.total_var[i],
                "var_t_plus_g_lo": self.total_var_ci[i][0], "var_t_plus_g_hi": self.total_var_ci[i][1],
                "increment_var": self.increment_var[inc] if inc >= 0 else math.nan,
                "increment_var_lo": self.increment_var_ci[inc][0] if inc >= 0 else math.nan,
                "increment_var_hi": self.increment_var_ci[inc][1] if inc >= 0 else math.nan,
                "split_msq": self.split_total_msq[i],
                "split_increment_msq": self.split_increment_msq[inc] if inc >= 0 else math.nan,
            })
        return out


def _clock_verdict(est, lo, hi):
    nonincreasing = all(est[i + 1] <= hi[i] for i in range(len(est) - 1))
    if nonincreasing and est[-1] < DECREASE_FACTOR * est[0] and hi[-1] < lo[0]:
        return "clock"
    if est[-1] > GROWTH_FACTOR * est[0] and lo[-1] > hi[0]:
        return "homogeneous"
    return "inconclusive"


def clock_convergence(batch, k_list, n_resamples=N_RESAMPLES) -> ClockReport:
    """Does T(Lambda_u) + g(u), g(u) = -E T(Lambda_u), settle down along k_list?

    The verdict reads the variance of the increments
    (T + g)(u_{k_{i+1}}) - (T + g)(u_{k_i}) between consecutive listed depths:
    shrinking increments mean the sequence converges (asymptotic clock),
    growing ones mean the spread keeps accumulating (time-homogeneous).
    List depths roughly geometrically so that increments compare like with
    like.  A split-sample column (g fitted on the first half of the paths,
    mean square evaluated on the second half) is included for robustness.
    """
    k = list(k_list)
    if len(k) < 3 or any(b <= a for a, b in zip(k, k[1:])):
        raise DomainError("k_list must be increasing with at least 3 depths")
    hits = _as_hits(batch, k)
    T = hits.times
    g = -T.mean(axis=0)
    inc = np.diff(T, axis=1)
    cols = np.concatenate([T, inc], axis=1)
    _, bv = bootstrap_moments(cols, n_resamples, hits.seed)
    var = cols.var(axis=0, ddof=1)
    lo, hi = _interval(bv, var)
    m = len(k)
    half = T.shape[0] // 2
    g_fit = -T[:half].mean(axis=0)
    z = T[half:] + g_fit
    split_total = (z * z).mean(axis=0)
    dz = np.diff(z, axis=1)
    split_inc = (dz * dz).mean(axis=0)
    verdict = _clock_verdict(var[m:], lo[m:], hi[m:])
    return ClockReport(
        k=[int(x) for x in hits.k], u=[float(x) for x in hits.u], g=g.tolist(),
        total_var=var[:m].tolist(), total_var_ci=list(zip(lo[:m].tolist(), hi[:m].tolist())),
        increment_var=var[m:].tolist(), increment_var_ci=list(zip(lo[m:].tolist(), hi[m:].tolist())),
        split_total_msq=split_total.tolist(), split_increment_msq=split_inc.tolist(),
        verdict=verdict,
        thresholds={"decrease_factor": DECREASE_FACTOR, "growth_factor": GROWTH_FACTOR,
                    "ci_level": CI_LEVEL, "n_resamples": n_resamples},
    )


@dataclass
class StartInsensitivity:
    u: float
    k: int
    axis: float
    means: list
    max_difference: float
    max_difference_ci: tuple
    reference_scale: float  # f_*(axis)^2

    def to_dict(self):
        return asdict(self)


def _section_at_or_above(ladder_values, u):
    k = int(np.searchsorted(ladder_values, u - 1e-12, side="left"))
    if k >= len(ladder_values):
        raise DomainError(f"depth {u} lies beyond the ladder")
    return k


def start_insensitivity(fld, starts, u: float, n_paths: int = 2000, base_seed: int = 0,
                        workers=None, n_resamples=N_RESAMPLES) -> StartInsensitivity:
    """Max pairwise gap between mean T(Lambda_u) from starts on one cross-section.

    All starts share the same base seed (common random numbers), and the
    interval for the gap comes from resampling path indices jointly.
    ``u`` is rounded up to the next ladder checkpoint.
    """
    from .simulator import run_batch

    starts = [s if isinstance(s, Point) else Point(tuple(s)) for s in starts]
    if not starts:
        raise DomainError("need at least one start")
    axes = {s.axis for s in starts}
    if len(axes) != 1:
        raise DomainError(f"starts lie on different axial layers: {sorted(axes)}")
    axis = starts[0].axis
    g = fld.grid
    k = _section_at_or_above(g.ladder_values, u)
    f_star = g.profile.running_sup(axis)
    if len(starts) == 1:
        b = run_batch(fld, starts[0], n_paths, base_seed, workers)
        mean = float(_as_hits(b, [k]).times.mean())
        return StartInsensitivity(float(g.ladder_values[k]), k, axis, [mean], 0.0, (0.0, 0.0), f_star**2)
    cols = []
    for s in starts:
        b = run_batch(fld, s, n_paths, base_seed, workers)
        cols.append(_as_hits(b, [k]).times[:, 0])
    X = np.stack(cols, axis=1)
    means = X.mean(axis=0)
    bm, _ = bootstrap_moments(X, n_resamples, base_seed)
    pairs = list(itertools.combinations(range(len(starts)), 2))
    gap = max(abs(means[i] - means[j]) for i, j in pairs)
    boot_gap = np.max(np.stack([np.abs(bm[:, i] - bm[:, j]) for i, j in pairs], axis=1), axis=1)
    lo, hi = _interval(boot_gap, gap)
    return StartInsensitivity(float(g.ladder_values[k]), k, axis, means.tolist(), float(gap),
                              (float(lo), float(hi)), f_star**2)


@dataclass
class SupVarianceTable:
    u: float
    rows: list
    strictly_decreasing: bool | None

    def to_dict(self):
        return asdict(self)


_SUP_COLUMNS = 32


def sup_variance_decay(fld, start_axes, u: float, n_paths: int = 2000, base_seed: int = 0,
                       workers=None, n_resamples=N_RESAMPLES) -> SupVarianceTable:
    """sup over sections s_k in (start, u] of Var T(Lambda_{s_k}) for each start depth.

    Only defined in the asymptotic-clock regime, where it should vanish as
    the start moves down the tube.  The supremum is taken over at most 32
    evenly spaced sections (always including the deepest one).
    """
    from .simulator import run_batch

    g = fld.grid
    if classify(g.profile).regime is not Regime.INFINITE_CLOCK:
        raise PreconditionError("sup-variance decay is only defined in the InfiniteClock regime")
    start_axes = [float(x) for x in start_axes]
    if any(b <= a for a, b in zip(start_axes, start_axes[1:])):
        raise DomainError("start axes must be increasing")
    k_u = int(np.searchsorted(g.ladder_values, u + 1e-12, side="right") - 1)
    rows = []
    for x in start_axes:
        if x >= u:
            raise DomainError(f"start axis {x} is not below u={u}")
        b = run_batch(fld, Point((0.0,) * (g.d - 1) + (x,)), n_paths, base_seed, workers)
        k_lo = int(np.searchsorted(g.ladder_values, b.start_axis, side="right"))
        ks = np.unique(np.linspace(k_lo, k_u, min(_SUP_COLUMNS, k_u - k_lo + 1)).round().astype(int))
        T = _as_hits(b, ks).times
        var = T.var(axis=0, ddof=1)
        _, bv = bootstrap_moments(T, n_resamples, base_seed)
        sup = float(var.max())
        lo, hi = _interval(bv.max(axis=1), sup)
        rows.append({"start_axis": float(b.start_axis), "sup_var": sup, "sup_var_lo": float(lo),
                     "sup_var_hi": float(hi), "k_argmax": int(ks[int(np.argmax(var))]),
                     "n_sections": int(len(ks))})
    verdict = None
    if len(rows) > 1:
        verdict = all(r2["sup_var_hi"] < r1["sup_var_lo"] for r1, r2 in zip(rows, rows[1:]))
    return SupVarianceTable(float(u), rows, verdict)
