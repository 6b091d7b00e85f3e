import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridsmpc.ev_model import EvState
from gridsmpc.freespace import (
    DegenerateHullError,
    HullNotFoundError,
    admissible_safe_space,
    free_path,
    rear_corner_cells,
    supercover_line,
    vertices_to_halfspaces,
)
from gridsmpc.grid import GridSpec, cell_to_world
from gridsmpc.pog import Bog

from .oracles import enumerate_touched, winding_number


def test_supercover_examples():
    assert supercover_line((0, 0), (3, 0)) == [(0, 0), (1, 0), (2, 0), (3, 0)]
    diag = supercover_line((0, 0), (2, 2))
    assert set(diag) == {(0, 0), (1, 1), (2, 2), (0, 1), (1, 0), (1, 2), (2, 1)}
    assert diag[0] == (0, 0) and diag[-1] == (2, 2)


@given(st.tuples(st.integers(0, 20), st.integers(0, 20)), st.tuples(st.integers(0, 20), st.integers(0, 20)))
def test_supercover_matches_exact_enumeration(c0, c1):
    line = supercover_line(c0, c1)
    assert set(line) == enumerate_touched(c0, c1)
    assert len(line) == len(set(line))
    assert set(supercover_line(c1, c0)) == set(line)
    # traversal order: consecutive cells share at least a corner
    assert all(max(abs(a[0] - b[0]), abs(a[1] - b[1])) == 1 for a, b in zip(line, line[1:]))


G = GridSpec(0.0, 0.0, 0.5, 0.25, 40, 28)


def test_free_path_examples():
    bog = Bog.empty(G)
    assert free_path(bog, (0, 3), (39, 20))
    bog.b[10, :] = 1
    assert not free_path(bog, (2, 5), (30, 5))
    bog2 = Bog.empty(G)
    bog2.b[2, 5] = 1
    assert not free_path(bog2, (2, 5), (30, 5))


def test_hull_on_empty_grid_spans_road():
    g = GridSpec(0.0, 0.0, 0.5, 0.25, 20, 14)
    ev = EvState(4.0, 1.75, 0.0, 25.0)
    hv = admissible_safe_space(Bog.empty(g), ev, 6.0, 2.0)
    # rear corners sit at x = 1.0, i.e. column 2
    assert hv.m2 == cell_to_world(g, (2, 0))
    assert hv.m1 == cell_to_world(g, (2, 13))
    assert hv.e2 == cell_to_world(g, (19, 0))
    assert hv.e1 == cell_to_world(g, (19, 13))


def _right_lane_blocked():
    bog = Bog.empty(G)
    bog.b[27:40, 3:12] = 1  # 13 x 9 block over the right lane, reaching the range column
    return bog


def test_hull_confined_to_open_lane():
    bog = _right_lane_blocked()
    ev = EvState(4.0, 5.25, 0.0, 25.0)
    hv = admissible_safe_space(bog, ev, 6.0, 2.0)
    assert hv.e2[1] >= 12 * G.cy and hv.e1[1] >= hv.e2[1]
    assert hv.m1[1] == cell_to_world(G, (0, 27))[1]
    poly = vertices_to_halfspaces(hv)
    for i, j in np.argwhere(bog.b):
        x, y = cell_to_world(G, (i, j))
        assert not np.all(poly.violation(x, y) < 0)
    assert poly.contains(ev.x, ev.y)
    for c in rear_corner_cells(G, ev, 6.0, 2.0):
        assert poly.contains(*cell_to_world(G, c), tol=1e-9)


def test_hull_not_found_when_range_column_blocked():
    bog = Bog.empty(G)
    bog.b[39, :] = 1
    with pytest.raises(HullNotFoundError):
        admissible_safe_space(bog, EvState(4.0, 5.25, 0.0, 25.0), 6.0, 2.0)


def test_hull_not_found_when_ev_cell_occupied():
    bog = Bog.empty(G)
    bog.b[8, 21] = 1
    with pytest.raises(HullNotFoundError):
        admissible_safe_space(bog, EvState(4.0, 5.25, 0.0, 25.0), 6.0, 2.0)


def test_hull_is_deterministic():
    bog = _right_lane_blocked()
    ev = EvState(4.0, 5.25, 0.0, 25.0)
    assert admissible_safe_space(bog, ev, 6.0, 2.0) == admissible_safe_space(bog, ev, 6.0, 2.0)


def test_run_choice_prefers_nearest_to_ev():
    bog = Bog.empty(G)
    bog.b[39, 10:14] = 1  # splits the range column into two runs
    low = admissible_safe_space(bog, EvState(4.0, 1.0, 0.0, 25.0), 6.0, 2.0)
    assert low.e1[1] < 10 * G.cy
    high = admissible_safe_space(bog, EvState(4.0, 5.5, 0.0, 25.0), 6.0, 2.0)
    assert high.e2[1] > 14 * G.cy


def test_unit_square_halfspaces():
    poly = vertices_to_halfspaces([(0, 0), (1, 0), (1, 1), (0, 1)])
    assert poly.a.shape == (4, 4)
    assert not poly.a[:, 2:].any()
    assert np.allclose(poly.violation(0.5, 0.5), -0.5)
    assert np.allclose(np.linalg.norm(poly.a[:, :2], axis=1), 1.0)


def test_collinear_vertices_rejected():
    with pytest.raises(DegenerateHullError):
        vertices_to_halfspaces([(0, 0), (1, 1), (2, 2), (3, 3)])


def test_repeated_vertex_collapses_rows():
    poly = vertices_to_halfspaces([(0, 0), (4, 1), (4, 1), (0, 2)])
    assert poly.a.shape[0] == 3


def _random_convex_quad(rng):
    while True:
        angles = np.sort(rng.uniform(0, 2 * math.pi, 4))
        r = rng.uniform(0.5, 3.0, 4)
        pts = [(float(r[k] * math.cos(angles[k])), float(r[k] * math.sin(angles[k]))) for k in range(4)]
        crosses = []
        for k in range(4):
            a, b, c = pts[k], pts[(k + 1) % 4], pts[(k + 2) % 4]
            crosses.append((b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]))
        if min(crosses) > 1e-3:
            return pts


def test_halfspaces_agree_with_winding_number():
    rng = np.random.default_rng(11)
    for _ in range(20):
        quad = _random_convex_quad(rng)
        poly = vertices_to_halfspaces(quad)
        for v in quad:
            assert poly.violation(*v).max() <= 1e-9
        pts = rng.uniform(-3.5, 3.5, size=(500, 2))
        for p in pts:
            inside_w = winding_number(tuple(p), quad) != 0
            viol = poly.violation(*p)
            if np.min(np.abs(viol)) < 1e-9:
                continue
            assert inside_w == bool(np.all(viol < 0))


@given(st.integers(0, 2**32 - 1), st.tuples(st.integers(0, 39), st.integers(0, 27)),
       st.tuples(st.integers(0, 39), st.integers(0, 27)))
def test_free_path_agrees_with_cell_walk(seed, c0, c1):
    bog = Bog(G, (np.random.default_rng(seed).random((40, 28)) < 0.03).astype(np.uint8))
    want = all(bog.b[c] == 0 for c in supercover_line(c0, c1))
    assert free_path(bog, c0, c1) == want
