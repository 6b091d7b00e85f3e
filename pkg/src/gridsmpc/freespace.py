"""Convex admissible region extraction from a binary occupancy grid."""

from __future__ import annotations

import functools
import math
from dataclasses import dataclass
from typing import Iterator

import numpy as np

from .ev_model import EvState
from .grid import CellIndex, GridSpec, cell_to_world, world_to_cell
from .pog import Bog

Point = tuple[float, float]


class HullNotFoundError(RuntimeError):
    pass


class DegenerateHullError(ValueError):
    pass


@dataclass(frozen=True)
class HullVertices:
    """Four hull corners, counterclockwise: rear-right, front-right, front-left, rear-left.

    ``m2``/``m1`` are the expanded rear anchors, ``e2``/``e1`` the edges of the
    free run in the range column.
    """

    m2: Point
    e2: Point
    e1: Point
    m1: Point

    def points(self) -> list[Point]:
        return [self.m2, self.e2, self.e1, self.m1]


@dataclass(frozen=True, eq=False)
class Polytope:
    """Halfspaces ``a @ [x, y, psi, v] <= b``; only the position columns are nonzero."""

    a: np.ndarray
    b: np.ndarray

    def violation(self, x: float, y: float) -> np.ndarray:
        return self.a[:, :2] @ np.array([x, y]) - self.b

    def contains(self, x: float, y: float, tol: float = 0.0) -> bool:
        return bool(np.all(self.violation(x, y) <= tol))

    @classmethod
    def unbounded(cls) -> "Polytope":
        return cls(np.zeros((0, 4)), np.zeros(0))


def iter_supercover(c0: CellIndex, c1: CellIndex) -> Iterator[CellIndex]:
    """Cells touched by the segment between two cell centers, in traversal order.

    Where the segment crosses a cell corner exactly, both side cells are
    emitted before the diagonal one.
    """
    x, y = c0
    dx, dy = c1[0] - x, c1[1] - y
    sx = 1 if dx > 0 else -1
    sy = 1 if dy > 0 else -1
    nx, ny = abs(dx), abs(dy)
    yield (x, y)
    ix = iy = 0
    while ix < nx or iy < ny:
        # sign compares the next vertical vs horizontal grid-line crossing
        decision = (1 + 2 * ix) * ny - (1 + 2 * iy) * nx
        if decision == 0:
            yield (x + sx, y)
            yield (x, y + sy)
            x += sx
            y += sy
            ix += 1
            iy += 1
        elif decision < 0:
            x += sx
            ix += 1
        else:
            y += sy
            iy += 1
        yield (x, y)


def supercover_line(c0: CellIndex, c1: CellIndex) -> list[CellIndex]:
    return list(iter_supercover(c0, c1))


@functools.lru_cache(maxsize=16384)
def _supercover_offsets(dx: int, dy: int) -> tuple[np.ndarray, np.ndarray]:
    # the traversal depends only on the offset, so the hull search reuses it
    cells = np.array(supercover_line((0, 0), (dx, dy)), dtype=np.intp)
    return cells[:, 0], cells[:, 1]


def free_path(bog: Bog, c0: CellIndex, c1: CellIndex) -> bool:
    di, dj = _supercover_offsets(c1[0] - c0[0], c1[1] - c0[1])
    return not bog.b[di + c0[0], dj + c0[1]].any()


def _clamped_cell(g: GridSpec, x: float, y: float) -> CellIndex:
    # corners may poke past the road edge; anchor them to the nearest cell
    x = min(max(x, g.origin_x), g.x_max - 1e-9 * g.cx)
    y = min(max(y, g.origin_y), g.y_max - 1e-9 * g.cy)
    return world_to_cell(g, x, y)


def rear_corner_cells(g: GridSpec, ev: EvState, length: float, width: float):
    """Cells of the rear-left (``c_r1``) and rear-right (``c_r2``) EV corners."""
    c, s = math.cos(ev.psi), math.sin(ev.psi)
    bx, by = ev.x - c * length / 2, ev.y - s * length / 2
    hx, hy = -s * width / 2, c * width / 2
    return _clamped_cell(g, bx + hx, by + hy), _clamped_cell(g, bx - hx, by - hy)


def _runs(js: list[int]) -> list[list[int]]:
    runs: list[list[int]] = []
    for j in js:
        if runs and j == runs[-1][-1] + 1:
            runs[-1].append(j)
        else:
            runs.append([j])
    return runs


def admissible_safe_space(
    bog: Bog,
    ev_state: EvState,
    ev_length: float,
    ev_width: float,
    range_col: int | None = None,
) -> HullVertices:
    """Four-vertex admissible region ahead of the EV.

    The range column defaults to the last grid column. Raises
    :class:`HullNotFoundError` if the EV anchors are unusable or no cell of
    the range column is reachable from both rear corners.
    """
    g = bog.spec
    b = bog.b
    try:
        c_ev = world_to_cell(g, ev_state.x, ev_state.y)
    except ValueError as exc:
        raise HullNotFoundError(f"EV center outside grid: {exc}") from exc
    c_r1, c_r2 = rear_corner_cells(g, ev_state, ev_length, ev_width)
    for name, c in (("center", c_ev), ("rear-left", c_r1), ("rear-right", c_r2)):
        if b[c]:
            raise HullNotFoundError(f"EV {name} cell {c} is occupied")

    col = g.nx - 1 if range_col is None else range_col
    if not 0 <= col < g.nx:
        raise HullNotFoundError(f"range column {col} outside grid")
    c_range = [(col, j) for j in range(g.ny) if b[col, j] == 0]
    free_js = [
        c[1] for c in c_range if free_path(bog, c, c_r1) and free_path(bog, c, c_r2)
    ]
    if not free_js:
        raise HullNotFoundError("no free path from the range column to the EV")

    j_ev = c_ev[1]
    run = min(_runs(free_js), key=lambda r: (min(abs(j - j_ev) for j in r), -r[-1]))
    e1, e2 = (col, run[-1]), (col, run[0])

    def expandable(c: CellIndex) -> bool:
        return (
            g.in_bounds(c)
            and b[c] == 0
            and free_path(bog, c, e1)
            and free_path(bog, c, e2)
        )

    m1, m2 = c_r1, c_r2
    while expandable((m1[0], m1[1] + 1)):
        m1 = (m1[0], m1[1] + 1)
    while expandable((m2[0], m2[1] - 1)):
        m2 = (m2[0], m2[1] - 1)

    return HullVertices(
        m2=cell_to_world(g, m2),
        e2=cell_to_world(g, e2),
        e1=cell_to_world(g, e1),
        m1=cell_to_world(g, m1),
    )


def _convex_hull(points: list[Point]) -> list[Point]:
    """Counterclockwise convex hull (monotone chain), collinear points dropped."""
    pts = sorted(set(points))
    if len(pts) <= 2:
        return pts

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower: list[Point] = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list[Point] = []
    for p in reversed(pts):
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    return lower[:-1] + upper[:-1]


def vertices_to_halfspaces(h: HullVertices | list[Point]) -> Polytope:
    """One normalized row per polygon edge with outward normals.

    Repeated or collinear vertices collapse to fewer rows.
    """
    pts = h.points() if isinstance(h, HullVertices) else list(h)
    ring = _convex_hull(pts)
    if len(ring) < 3:
        raise DegenerateHullError("hull vertices are collinear")
    rows, offs = [], []
    for k, p in enumerate(ring):
        q = ring[(k + 1) % len(ring)]
        dx, dy = q[0] - p[0], q[1] - p[1]
        norm = math.hypot(dx, dy)
        n = (dy / norm, -dx / norm)
        rows.append([n[0], n[1], 0.0, 0.0])
        offs.append(n[0] * p[0] + n[1] * p[1])
    return Polytope(np.array(rows), np.array(offs))
