import math

import pytest
from hypothesis import given, strategies as st

from gridsmpc.grid import (
    GridRangeError,
    GridSpec,
    cell_to_world,
    footprint_cells,
    road_grid,
    world_to_cell,
)

G = GridSpec(0.0, 0.0, 0.5, 0.25, 200, 28)


def brute_footprint(g, center, length, width):
    x0, x1 = center[0] - length / 2, center[0] + length / 2
    y0, y1 = center[1] - width / 2, center[1] + width / 2
    out = set()
    for i in range(g.nx):
        for j in range(g.ny):
            cx0, cy0 = g.origin_x + i * g.cx, g.origin_y + j * g.cy
            if cx0 <= x1 and cx0 + g.cx >= x0 and cy0 <= y1 and cy0 + g.cy >= y0:
                out.add((i, j))
    return out


def test_world_to_cell_examples():
    assert world_to_cell(G, 0.0, 0.0) == (0, 0)
    assert world_to_cell(G, 10.2, 5.25) == (20, 21)
    with pytest.raises(GridRangeError) as err:
        world_to_cell(G, -1.0, 0.0)
    assert err.value.axis == "x"
    with pytest.raises(GridRangeError) as err:
        world_to_cell(G, 1.0, 7.0)
    assert err.value.axis == "y"


def test_cell_to_world_examples():
    assert cell_to_world(G, (0, 0)) == (0.25, 0.125)
    assert cell_to_world(G, (20, 21)) == pytest.approx((10.25, 5.375))
    with pytest.raises(GridRangeError):
        cell_to_world(G, (200, 0))


def test_footprint_examples():
    cells = footprint_cells(G, (3.0, 1.0), 6.0, 2.0)
    assert len(cells) == 117
    assert {c[0] for c in cells} == set(range(13))
    assert {c[1] for c in cells} == set(range(9))
    assert cells == brute_footprint(G, (3.0, 1.0), 6.0, 2.0)

    center = cell_to_world(G, (5, 5))
    cells = footprint_cells(G, center, 0.5, 0.25)
    assert cells == {(i, j) for i in (4, 5, 6) for j in (4, 5, 6)}
    assert footprint_cells(G, (-20.0, 1.0), 6.0, 2.0) == set()


def test_road_grid_spans_road():
    g = road_grid(10.3, 7.0, 100.0)
    assert g.ny * g.cy == pytest.approx(7.0)
    assert g.origin_x == 0.0
    assert g.x_max >= 110.3


@given(st.integers(0, 199), st.integers(0, 27))
def test_round_trip(i, j):
    assert world_to_cell(G, *cell_to_world(G, (i, j))) == (i, j)


small = GridSpec(-2.0, 0.0, 0.5, 0.25, 30, 16)


@given(
    st.floats(-5, 15), st.floats(-1, 5), st.floats(0, 6), st.floats(0, 3),
    st.floats(0, 2), st.floats(0, 1),
)
def test_footprint_matches_enumeration_and_is_monotone(x, y, length, width, dl, dw):
    cells = footprint_cells(small, (x, y), length, width)
    assert cells == brute_footprint(small, (x, y), length, width)
    assert cells <= footprint_cells(small, (x, y), length + dl, width + dw)
    if small.origin_x <= x < small.x_max and 0 <= y < small.y_max:
        assert world_to_cell(small, x, y) in cells
