import numpy as np
import pytest

from doobtube.errors import BudgetError, DomainError
from doobtube.geometry import Point, WidthProfile
from doobtube.harmonic import FAR_WALL, INTERIOR, build_grid, solve_h
from doobtube.simulator import (run_batch, run_coupled_pair, run_coupling_batch, run_walk,
                                substream)
from doobtube.stats import moment_estimate


def test_section_hits_ordered(half_field):
    rec = run_walk(half_field, Point((0.0, 1.0)), (7, 0))
    hits = rec.hits()
    times = [t for _, t in hits]
    assert hits[0] == (0, 0.0)
    assert all(b > a for a, b in zip(times, times[1:]))
    assert all(b - a >= half_field.grid.time_step * (1 - 1e-12) for a, b in zip(times, times[1:]))
    assert times[-1] <= rec.lifetime
    assert rec.end_reason == "ReachedFarWall"
    assert rec.lifetime == rec.steps * half_field.grid.time_step


def test_single_path_batch_equals_run_walk(half_field):
    b = run_batch(half_field, Point((0.0, 1.0)), 1, 11)
    rec = run_walk(half_field, Point((0.0, 1.0)), substream(11, 0))
    assert b.steps[0] == rec.steps
    np.testing.assert_array_equal(b.record(0).section_hits, rec.section_hits)


def test_same_seed_is_bit_identical(strip_field):
    a = run_batch(strip_field, Point((0.0, 0.0)), 200, 5)
    b = run_batch(strip_field, Point((0.0, 0.0)), 200, 5)
    np.testing.assert_array_equal(a.steps, b.steps)
    np.testing.assert_array_equal(a.hit_steps, b.hit_steps)
    assert a.content_hash() == b.content_hash()


def test_different_seeds_differ_but_agree_in_mean(strip_field):
    a = run_batch(strip_field, Point((0.0, 0.0)), 2000, 1)
    b = run_batch(strip_field, Point((0.0, 0.0)), 2000, 2)
    assert not np.array_equal(a.hit_steps, b.hit_steps)
    ea, eb = moment_estimate(a.lifetimes, seed=1), moment_estimate(b.lifetimes, seed=2)
    # 95% half-widths add to ~2.8 sigma of the difference; allow ~4 sigma
    half = lambda e: (e.mean_ci[1] - e.mean_ci[0]) / 2  # noqa: E731
    assert abs(ea.mean - eb.mean) <= 1.5 * (half(ea) + half(eb))


def test_worker_count_does_not_change_results(half_field):
    a = run_batch(half_field, Point((0.0, 1.0)), 60, 3, workers=1)
    b = run_batch(half_field, Point((0.0, 1.0)), 60, 3, workers=4)
    np.testing.assert_array_equal(a.steps, b.steps)
    np.testing.assert_array_equal(a.hit_steps, b.hit_steps)


def test_no_death_transitions(half_field):
    g = half_field.grid
    cum, nbr = half_field.transition_table()
    rows = g.node_kind == INTERIOR
    targets = nbr[rows]
    live = targets >= 0
    assert np.all(np.isin(g.node_kind[targets[live]], [INTERIOR, FAR_WALL]))
    # probability mass sits only on live targets: cum is flat across dead columns
    p = np.diff(np.concatenate([np.zeros((rows.sum(), 1)), cum[rows]], axis=1), axis=1)
    assert np.all(p[~live] == 0.0)


def test_walk_from_wall_neighbour_survives(strip_field):
    b = run_batch(strip_field, Point((0.875, 1.0)), 50, 9)
    assert b.snap_distance == 0.0
    assert np.all(b.steps > 0)


def test_start_is_snapped_and_recorded(half_field):
    b = run_batch(half_field, Point((0.01, 1.005)), 3, 0)
    assert b.snap_distance > 0
    assert b.start.coords == (0.0, 1.0)


@pytest.mark.parametrize("factor", [2.0, 0.5])
def test_brownian_scaling_is_bit_exact(factor):
    prof = WidthProfile.power(0.5)
    f1 = solve_h(build_grid(prof, 1 / 16, 20, 1.0, min_width_cells=6))
    f2 = solve_h(build_grid(prof.scaled(factor), factor / 16, 20, factor, min_width_cells=6))
    b1 = run_batch(f1, Point((0.0, 1.0)), 100, 4)
    b2 = run_batch(f2, Point((0.0, factor)), 100, 4)
    t1, t2 = b1.hit_times(), b2.hit_times()
    np.testing.assert_array_equal(t2 / factor**2, t1)
    np.testing.assert_array_equal(b2.lifetimes / factor**2, b1.lifetimes)


def test_budget_error_names_path(strip_field):
    with pytest.raises(BudgetError) as err:
        run_batch(strip_field, Point((0.0, 0.0)), 4, 0, max_steps=10)
    assert err.value.path_index == 0


def test_batch_rejects_empty(strip_field):
    with pytest.raises(DomainError):
        run_batch(strip_field, Point((0.0, 0.0)), 0, 0)


def test_identical_starts_meet_immediately(strip_field):
    rec = run_coupled_pair(strip_field, Point((0.0, 0.0)), Point((0.0, 0.0)), [(0, 0, 0), (0, 0, 1)], 5.0)
    assert rec.met and rec.meeting_time == 0.0 and rec.met_before == (True,)


def test_coupling_depth_must_lie_ahead(strip_field):
    with pytest.raises(DomainError):
        run_coupled_pair(strip_field, Point((0.0, 0.0)), Point((0.0, 6.0)), [(0, 0, 0), (0, 0, 1)], 5.0)


def test_coupling_batch_reproducible_and_monotone(strip_field):
    a = run_coupling_batch(strip_field, Point((0.0, 0.0)), Point((0.0, 2.0)), 300, 8, [4.0, 6.0, 9.0])
    b = run_coupling_batch(strip_field, Point((0.0, 0.0)), Point((0.0, 2.0)), 300, 8, [4.0, 6.0, 9.0],
                           workers=3)
    np.testing.assert_array_equal(a.met_before, b.met_before)
    fr = a.fractions()
    assert np.all(np.diff(fr) >= 0)
    pair = run_coupled_pair(strip_field, Point((0.0, 0.0)), Point((0.0, 2.0)),
                            [substream(8, 0, 0), substream(8, 0, 1)], [4.0, 6.0, 9.0])
    assert pair.met_before == tuple(a.met_before[0])


def test_strip_pairs_two_apart_meet():
    fld = solve_h(build_grid(WidthProfile.constant(1.0, a=-3.0), 0.125, 6000, 0.0))
    res = run_coupling_batch(fld, Point((0.0, 0.0)), Point((0.0, 2.0)), 1000, 3, [100.0, 1000.0, 2900.0])
    fr = res.fractions()
    assert fr[-1] >= 0.95
    assert np.all(np.diff(fr) >= 0)
