import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import STRIP_KAPPA
from doobtube.errors import DomainError, ResolutionError, SolverError
from doobtube.geometry import Point, WidthProfile, contains, ladder
from doobtube.harmonic import (AXIS_DOWN, AXIS_UP, FAR_WALL, INTERIOR, LATERAL, build_grid,
                               dense_reference_h, doob_step_distribution, layer_growth_rows, solve_h)


def _interior(fld):
    return np.flatnonzero(fld.grid.node_kind == INTERIOR)


def test_seven_nodes_per_layer():
    g = build_grid(WidthProfile.constant(1.0), 0.25, 3, 0.5, min_width_cells=2)
    assert g.far_wall_axis == 2.0
    assert all(g.layer_size(j) == 7 for j in range(1, g.n_layers + 1))
    xs = sorted(g.cross_index[g.layer_nodes(1), 0] * 0.25)
    assert xs == [-0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75]


def test_resolution_error_names_axis():
    prof = WidthProfile.power(0.5)
    vals = ladder(prof, 1.0, 2000).values
    N = int(np.argmax(prof(vals) <= 0.2))
    with pytest.raises(ResolutionError) as err:
        build_grid(prof, 0.05, N, 1.0)
    v = err.value.axis_value
    assert v is not None and prof(v) < 8 * 0.05
    assert f"{v:g}" in str(err.value)


def test_nodes_are_exactly_tube_points():
    prof = WidthProfile.power(0.5)
    g = build_grid(prof, 0.1, 6, 1.0, min_width_cells=4)
    for node in range(0, g.n_nodes, 7):
        assert contains(prof, g.node_point(node))
    # one step outside any boundary node's lateral direction is outside the tube
    lat = np.argwhere(g.nbr_kind == LATERAL)
    lat = lat[(lat[:, 1] >= 2) & (g.node_kind[lat[:, 0]] == INTERIOR)]
    assert len(lat)
    for node, col in lat[:200]:
        p = np.array(g.node_point(node).coords)
        step = np.zeros_like(p)
        step[(col - 2) // 2] = 0.1 if col % 2 == 0 else -0.1
        assert not contains(prof, Point(tuple(p + step)))


@pytest.mark.parametrize("factor", [2.0, 0.5])
def test_scaled_grid_has_same_nodes(factor):
    prof = WidthProfile.power(0.5)
    g1 = build_grid(prof, 1 / 16, 12, 1.0, min_width_cells=4)
    g2 = build_grid(prof.scaled(factor), factor / 16, 12, factor * 1.0, min_width_cells=4)
    assert g1.n_nodes == g2.n_nodes
    np.testing.assert_array_equal(g1.nbr, g2.nbr)
    np.testing.assert_array_equal(g1.nbr_kind, g2.nbr_kind)


def test_every_interior_node_has_full_neighbourhood(half_field):
    g = half_field.grid
    rows = g.node_kind == INTERIOR
    ok = (g.nbr[rows] >= 0) | (g.nbr_kind[rows] != INTERIOR)
    assert ok.all()
    assert np.all(np.isin(g.nbr_kind[rows], [INTERIOR, FAR_WALL, LATERAL, 3]))


def test_far_wall_values_equal(half_field):
    h = half_field.h()
    far = h[half_field.grid.node_kind == FAR_WALL]
    assert np.ptp(far) <= 1e-12 * far.max()


@pytest.mark.parametrize("name", ["tiny_field", "strip_field", "half_field"])
def test_residual_and_row_sums(request, name):
    fld = request.getfixturevalue(name)
    assert fld.residual <= 1e-10
    rows = np.array([doob_step_distribution(fld, n).sum() for n in _interior(fld)])
    assert np.max(np.abs(rows - 1.0)) <= 1e-9


@pytest.mark.parametrize("prof,delta,N,s0,d", [
    (WidthProfile.constant(1.0), 0.25, 4, 1.0, 2),
    (WidthProfile.power(0.5), 0.125, 3, 1.0, 2),
    (WidthProfile.table([(0, 1.0), (2, 0.6), (3, 1.2)]), 0.1, 4, 0.5, 2),
    (WidthProfile.constant(1.0), 0.25, 2, 1.0, 3),
])
def test_matches_dense_solve(prof, delta, N, s0, d):
    g = build_grid(prof, delta, N, s0, d=d, min_width_cells=2)
    assert g.n_nodes <= 500
    fld = solve_h(g)
    ref = dense_reference_h(g)
    ref = ref / ref[fld.anchor]
    inner = _interior(fld)
    np.testing.assert_allclose(fld.h(inner), ref[inner], rtol=1e-8)


def test_anchor_normalised(half_field):
    assert half_field.h(np.array([half_field.anchor]))[0] == pytest.approx(1.0, rel=1e-14)
    p = half_field.grid.node_point(half_field.anchor)
    assert p.axis == pytest.approx(1.0, abs=1 / 64)


def test_mantissas_stay_in_range(half_field, strip_field):
    for fld in (half_field, strip_field):
        m = fld.mantissa[fld.grid.node_kind != LATERAL]
        assert m.min() >= 1e-3 and m.max() <= 1e3


def test_maximum_on_far_wall(half_field):
    lh = half_field.log_h()
    assert half_field.grid.node_kind[int(np.argmax(lh))] == FAR_WALL


def test_positive_everywhere(half_field):
    assert np.all(np.isfinite(half_field.log_h(_interior(half_field))))


def _strip_growth(delta):
    g = build_grid(WidthProfile.constant(1.0, a=-8.0), delta, 20, 0.0)
    rows = layer_growth_rows(solve_h(g))
    mid = [gr for ax, gr, _ in rows if -4.0 <= ax <= 4.0]
    return float(np.median(mid))


def test_strip_growth_matches_discrete_eigenvalue():
    for delta in (0.1, 0.05):
        assert _strip_growth(delta) == pytest.approx(STRIP_KAPPA(delta), rel=1e-8)


def test_strip_growth_converges_at_second_order():
    e1 = abs(_strip_growth(0.1) - math.pi / 2)
    e2 = abs(_strip_growth(0.05) - math.pi / 2)
    assert 3.6 < e1 / e2 < 4.4
    assert abs(math.exp(_strip_growth(0.05)) / math.exp(math.pi / 2) - 1) < 0.01


def test_strip_forward_backward_ratio(strip_field):
    g = strip_field.grid
    node = g.find_node(Point((0.0, 2.0)))
    p = doob_step_distribution(strip_field, node)
    kappa = STRIP_KAPPA(g.delta)
    assert p[AXIS_UP] > 0.25 > p[AXIS_DOWN]
    assert p[AXIS_UP] / p[AXIS_DOWN] == pytest.approx(math.exp(2 * kappa * g.delta), rel=1e-6)
    assert p[AXIS_UP] / p[AXIS_DOWN] == pytest.approx(math.exp(math.pi * g.delta), rel=5 * g.delta**2)


def test_wall_direction_has_zero_probability(strip_field):
    g = strip_field.grid
    node = g.find_node(Point((0.875, 2.0)))
    assert g.nbr_kind[node, 2] == LATERAL
    p = doob_step_distribution(strip_field, node)
    assert p[2] == 0.0
    cum, nbr = strip_field.transition_table()
    assert nbr[node, 2] == -1


def test_boundary_nodes_rejected(strip_field):
    g = strip_field.grid
    far = int(np.flatnonzero(g.node_kind == FAR_WALL)[0])
    with pytest.raises(DomainError):
        doob_step_distribution(strip_field, far)
    with pytest.raises(DomainError):
        doob_step_distribution(strip_field, Point((0.06, 2.0)))


def test_far_wall_insensitivity():
    prof = WidthProfile.power(0.5)
    a = solve_h(build_grid(prof, 1 / 32, 40, 1.0))
    b = solve_h(build_grid(prof, 1 / 32, 60, 1.0))
    ga = a.grid
    window = ga.ladder_values[20]
    nodes = _interior(a)
    nodes = nodes[ga.layer_axis[ga.node_layer[nodes]] <= window]
    ra, rb = a.neighbor_ratios()[nodes], b.neighbor_ratios()[nodes]
    mask = ra > 0
    assert np.max(np.abs(rb[mask] / ra[mask] - 1)) < 1e-3


def test_solver_error_carries_history():
    g = build_grid(WidthProfile.constant(1.0), 0.25, 4, 1.0, min_width_cells=2)
    with pytest.raises(SolverError) as err:
        solve_h(g, tol=1e-300, max_sweeps=2)
    assert len(err.value.residual_history) == 3


def test_layer_growth_rows_shape(tiny_field):
    rows = layer_growth_rows(tiny_field)
    assert len(rows) == tiny_field.grid.n_layers
    assert math.isnan(rows[0][1]) and all(math.isfinite(r[1]) for r in rows[1:])
    assert all(r[2] == 7 for r in rows)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.0, 1.2), st.sampled_from([2, 3]))
def test_row_stochastic_property(beta, d):
    g = build_grid(WidthProfile.power(beta), 0.1, 3, 0.5, d=d, min_width_cells=2)
    fld = solve_h(g)
    cum, _ = fld.transition_table()
    inner = _interior(fld)
    assert np.all(cum[inner, -1] == 1.0)
    raw = fld.neighbor_ratios()[inner].sum(axis=1) / (2 * d)
    assert np.max(np.abs(raw - 1)) <= 1e-9
