"""Road discretization: an evenly spaced cell field in world coordinates."""

from __future__ import annotations

import math
from dataclasses import dataclass

CellIndex = tuple[int, int]


class GridRangeError(ValueError):
    """A coordinate or index falls outside the grid."""

    def __init__(self, axis: str, value: float, lo: float, hi: float):
        super().__init__(f"{axis}={value!r} outside grid range [{lo}, {hi})")
        self.axis = axis


@dataclass(frozen=True)
class GridSpec:
    """Grid geometry. Cell (i, j) covers
    [origin_x + i*cx, origin_x + (i+1)*cx] x [origin_y + j*cy, origin_y + (j+1)*cy].

    ``i`` runs along the road (x), ``j`` across it (y).
    """

    origin_x: float
    origin_y: float
    cx: float
    cy: float
    nx: int
    ny: int

    def __post_init__(self):
        if not (self.cx > 0 and self.cy > 0):
            raise ValueError("cell dimensions must be positive")
        if self.nx < 1 or self.ny < 1:
            raise ValueError("grid needs at least one cell per axis")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.nx, self.ny)

    @property
    def x_max(self) -> float:
        return self.origin_x + self.nx * self.cx

    @property
    def y_max(self) -> float:
        return self.origin_y + self.ny * self.cy

    def in_bounds(self, c: CellIndex) -> bool:
        return 0 <= c[0] < self.nx and 0 <= c[1] < self.ny

    def centers(self):
        """Cell-center coordinate vectors ``(xs, ys)`` of lengths nx and ny."""
        import numpy as np

        xs = self.origin_x + (np.arange(self.nx) + 0.5) * self.cx
        ys = self.origin_y + (np.arange(self.ny) + 0.5) * self.cy
        return xs, ys


def road_grid(
    ev_x: float,
    road_width: float,
    ahead: float,
    behind: float = 10.0,
    cx: float = 0.5,
    cy: float = 0.25,
) -> GridSpec:
    """Grid spanning the full road width and ``[ev_x - behind, ev_x + ahead]``.

    The rear edge is snapped down to a multiple of ``cx``.
    """
    origin_x = math.floor((ev_x - behind) / cx) * cx
    nx = max(1, math.ceil((ev_x + ahead - origin_x) / cx - 1e-9))
    ny = max(1, round(road_width / cy))
    return GridSpec(origin_x, 0.0, cx, cy, nx, ny)


def world_to_cell(g: GridSpec, x: float, y: float) -> CellIndex:
    if not (g.origin_x <= x < g.x_max):
        raise GridRangeError("x", x, g.origin_x, g.x_max)
    if not (g.origin_y <= y < g.y_max):
        raise GridRangeError("y", y, g.origin_y, g.y_max)
    return (_index(x, g.origin_x, g.cx, g.nx), _index(y, g.origin_y, g.cy, g.ny))


def _index(v: float, origin: float, size: float, n: int) -> int:
    # the division can round across a cell edge; settle it against the edges themselves
    k = min(max(int(math.floor((v - origin) / size)), 0), n - 1)
    if k > 0 and origin + k * size > v:
        k -= 1
    elif k < n - 1 and origin + (k + 1) * size <= v:
        k += 1
    return k


def cell_to_world(g: GridSpec, c: CellIndex) -> tuple[float, float]:
    i, j = c
    if not 0 <= i < g.nx:
        raise GridRangeError("i", i, 0, g.nx)
    if not 0 <= j < g.ny:
        raise GridRangeError("j", j, 0, g.ny)
    return (g.origin_x + (i + 0.5) * g.cx, g.origin_y + (j + 0.5) * g.cy)


def footprint_cells(
    g: GridSpec, center: tuple[float, float], length: float, width: float
) -> set[CellIndex]:
    """In-bounds cells whose closed square meets the closed axis-aligned rectangle."""
    x0 = center[0] - length / 2
    x1 = center[0] + length / 2
    y0 = center[1] - width / 2
    y1 = center[1] + width / 2
    # closed intersection: cell i touches iff its left edge <= x1 and right edge >= x0;
    # the index bounds get one cell of slack, the exact test below settles rounding
    i_lo = max(0, math.floor((x0 - g.origin_x) / g.cx) - 1)
    i_hi = min(g.nx - 1, math.floor((x1 - g.origin_x) / g.cx) + 1)
    j_lo = max(0, math.floor((y0 - g.origin_y) / g.cy) - 1)
    j_hi = min(g.ny - 1, math.floor((y1 - g.origin_y) / g.cy) + 1)
    iis = [
        i for i in range(i_lo, i_hi + 1)
        if g.origin_x + i * g.cx <= x1 and g.origin_x + i * g.cx + g.cx >= x0
    ]
    jjs = [
        j for j in range(j_lo, j_hi + 1)
        if g.origin_y + j * g.cy <= y1 and g.origin_y + j * g.cy + g.cy >= y0
    ]
    return {(i, j) for i in iis for j in jjs}
