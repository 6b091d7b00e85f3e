"""Probabilistic and binary occupancy grids."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, TextIO

import numpy as np
from scipy import ndimage
from scipy.special import ndtr, owens_t

from .grid import GridSpec

POSITION_FLOOR = 1e-6
# how a cell gets its value from the position distribution
CELL_MASS = "mass"  # probability that the TV center lies in the cell
CELL_DENSITY = "density"  # density at the cell center
# fields are evaluated within this many standard deviations of the mean
SUPPORT_SIGMAS = 10.0


class DegenerateCovarianceError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class Pog:
    """Per-cell pseudo-probabilities, ``p[i, j]`` with shape ``(nx, ny)``."""

    spec: GridSpec
    p: np.ndarray


@dataclass(frozen=True, eq=False)
class Bog:
    """Binary occupancy: 1 marks an inadmissible cell."""

    spec: GridSpec
    b: np.ndarray

    @classmethod
    def empty(cls, spec: GridSpec) -> "Bog":
        return cls(spec, np.zeros(spec.shape, dtype=np.uint8))


def _check_sigma(sigma: np.ndarray) -> float:
    det = float(np.linalg.det(sigma))
    if not (det > 1e-12 and sigma[0, 0] > 0):
        raise DegenerateCovarianceError(f"covariance not positive definite (det={det:g})")
    return det


def gaussian_density(mean, sigma, point) -> float:
    sigma = np.asarray(sigma, dtype=float)
    det = _check_sigma(sigma)
    d = np.asarray(point, dtype=float) - np.asarray(mean, dtype=float)
    return float(
        math.exp(-0.5 * d @ np.linalg.solve(sigma, d)) / math.sqrt((2 * math.pi) ** 2 * det)
    )


Box = tuple[int, int, int, int]  # i0, i1, j0, j1, half open


def _full(spec: GridSpec) -> Box:
    return (0, spec.nx, 0, spec.ny)


def support_box(spec: GridSpec, mean, sigma, sigmas: float = SUPPORT_SIGMAS) -> Box:
    """Cells meeting the ``mean +- sigmas * std`` rectangle (marginal stds), clipped to the grid."""
    sigma = np.asarray(sigma, dtype=float)
    hx = sigmas * math.sqrt(sigma[0, 0])
    hy = sigmas * math.sqrt(sigma[1, 1])
    i0 = math.floor((mean[0] - hx - spec.origin_x) / spec.cx)
    i1 = math.floor((mean[0] + hx - spec.origin_x) / spec.cx) + 1
    j0 = math.floor((mean[1] - hy - spec.origin_y) / spec.cy)
    j1 = math.floor((mean[1] + hy - spec.origin_y) / spec.cy) + 1
    return (
        min(max(i0, 0), spec.nx), min(max(i1, 0), spec.nx),
        min(max(j0, 0), spec.ny), min(max(j1, 0), spec.ny),
    )


def sample_density(spec: GridSpec, mean, sigma, box: Box | None = None) -> np.ndarray:
    """Gaussian density at cell centers; the whole grid, or only the cells of ``box``."""
    sigma = np.asarray(sigma, dtype=float)
    det = _check_sigma(sigma)
    inv = np.linalg.inv(sigma)
    i0, i1, j0, j1 = _full(spec) if box is None else box
    xs = spec.origin_x + (np.arange(i0, i1) + 0.5) * spec.cx
    ys = spec.origin_y + (np.arange(j0, j1) + 0.5) * spec.cy
    dx = (xs - mean[0])[:, None]
    dy = (ys - mean[1])[None, :]
    quad = inv[0, 0] * dx * dx + (inv[0, 1] + inv[1, 0]) * dx * dy + inv[1, 1] * dy * dy
    return np.exp(-0.5 * quad) / math.sqrt((2 * math.pi) ** 2 * det)


def cell_mass(spec: GridSpec, mean, sigma, box: Box | None = None) -> np.ndarray:
    """Gaussian probability of each cell (of the grid or of ``box``).

    Separable when ``sigma`` is diagonal; otherwise from the joint CDF on the
    lattice of cell edges.
    """
    sigma = np.asarray(sigma, dtype=float)
    _check_sigma(sigma)
    i0, i1, j0, j1 = _full(spec) if box is None else box
    ex = spec.origin_x + spec.cx * np.arange(i0, i1 + 1)
    ey = spec.origin_y + spec.cy * np.arange(j0, j1 + 1)
    if sigma[0, 1] == 0.0 and sigma[1, 0] == 0.0:
        px = np.diff(ndtr((ex - mean[0]) / math.sqrt(sigma[0, 0])))
        py = np.diff(ndtr((ey - mean[1]) / math.sqrt(sigma[1, 1])))
        return np.outer(px, py)
    sx, sy = math.sqrt(sigma[0, 0]), math.sqrt(sigma[1, 1])
    rho = 0.5 * (sigma[0, 1] + sigma[1, 0]) / (sx * sy)
    cdf = bivariate_normal_cdf(
        ((ex - mean[0]) / sx)[:, None], ((ey - mean[1]) / sy)[None, :], rho
    )
    cell = cdf[1:, 1:] - cdf[:-1, 1:] - cdf[1:, :-1] + cdf[:-1, :-1]
    return np.clip(cell, 0.0, None)


def bivariate_normal_cdf(h, k, rho: float) -> np.ndarray:
    """P(X <= h, Y <= k) for standard normals with correlation ``rho``, via Owen's T."""
    h, k = np.broadcast_arrays(np.asarray(h, dtype=float), np.asarray(k, dtype=float))
    s = math.sqrt(1.0 - rho * rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        ah = np.where(h == 0, 0.0, (k - rho * h) / (h * s))
        ak = np.where(k == 0, 0.0, (h - rho * k) / (k * s))
    # T(h, a) as h -> 0 tends to +-1/4 with the sign of a
    th = np.where(h == 0, 0.25 * np.sign(k), owens_t(h, ah))
    tk = np.where(k == 0, 0.25 * np.sign(h), owens_t(k, ak))
    beta = np.where((h * k > 0) | ((h * k == 0) & (h + k >= 0)), 0.0, 0.5)
    out = 0.5 * ndtr(h) + 0.5 * ndtr(k) - th - tk - beta
    return np.where((h == 0) & (k == 0), 0.25 + math.asin(rho) / (2 * math.pi), out)


def position_field(spec: GridSpec, mean, sigma, values: str = CELL_MASS) -> np.ndarray:
    """Per-cell values of the position distribution over the whole grid.

    Cells beyond ``SUPPORT_SIGMAS`` standard deviations are set to zero; the
    true values there are below 1e-22.
    """
    out = np.zeros(spec.shape)
    i0, i1, j0, j1 = box = support_box(spec, mean, sigma)
    if i0 < i1 and j0 < j1:
        out[i0:i1, j0:j1] = _field_on(spec, mean, sigma, values, box)
    return out


def _field_on(spec, mean, sigma, values, box) -> np.ndarray:
    if values == CELL_MASS:
        return cell_mass(spec, mean, sigma, box)
    if values == CELL_DENSITY:
        return sample_density(spec, mean, sigma, box)
    raise ValueError(f"unknown cell value mode {values!r}")


def window_half_widths(spec: GridSpec, length: float, width: float) -> tuple[int, int]:
    """Largest cell offsets with ``|di|*cx <= length/2`` and ``|dj|*cy <= width/2``."""
    # small tolerance so exact multiples are not lost to rounding
    ri = int(math.floor(length / 2 / spec.cx + 1e-9))
    rj = int(math.floor(width / 2 / spec.cy + 1e-9))
    return max(ri, 0), max(rj, 0)


def max_dilate(field: np.ndarray, ri: int, rj: int) -> np.ndarray:
    """Rectangular max filter of half-widths ``(ri, rj)``; outside cells are ignored."""
    field = np.asarray(field, dtype=float)
    if ri == 0 and rj == 0:
        return field.copy()
    return ndimage.maximum_filter(
        field, size=(2 * ri + 1, 2 * rj + 1), mode="constant", cval=-np.inf
    )


def position_block(sigma4: np.ndarray) -> np.ndarray:
    """(x, y) marginal of a ``[x, vx, y, vy]`` covariance, floored away from singular."""
    s = np.asarray(sigma4)[np.ix_([0, 2], [0, 2])]
    return s + POSITION_FLOOR * np.eye(2) if np.allclose(s, 0.0) else s


def build_tv_pog(
    spec: GridSpec,
    mean,
    sigma2d,
    tv_length: float,
    tv_width: float,
    values: str = CELL_MASS,
) -> Pog:
    """Evaluate the TV position distribution on the grid, then spread each
    cell's value over a footprint-sized window so the whole vehicle body is
    covered.

    ``values`` selects per-cell probability (default) or the density at cell
    centers. The result is not renormalized.
    """
    sigma2d = np.asarray(sigma2d, dtype=float)
    if np.allclose(sigma2d, 0.0):
        sigma2d = sigma2d + POSITION_FLOOR * np.eye(2)
    if values not in (CELL_MASS, CELL_DENSITY):
        raise ValueError(f"unknown cell value mode {values!r}")
    ri, rj = window_half_widths(spec, tv_length, tv_width)
    out = np.zeros(spec.shape)
    i0, i1, j0, j1 = box = support_box(spec, mean, sigma2d)
    if i0 >= i1 or j0 >= j1:
        return Pog(spec, out)
    # the field is zero outside the support, so only the support grown by the
    # window can change; the max there equals the max over the full grid
    a0, a1 = max(i0 - ri, 0), min(i1 + ri, spec.nx)
    b0, b1 = max(j0 - rj, 0), min(j1 + rj, spec.ny)
    local = np.zeros((a1 - a0, b1 - b0))
    local[i0 - a0 : i1 - a0, j0 - b0 : j1 - b0] = _field_on(spec, mean, sigma2d, values, box)
    out[a0:a1, b0:b1] = max_dilate(local, ri, rj)
    return Pog(spec, out)


def combine_pogs(parts: Iterable[tuple[float, Pog]]) -> Pog:
    """Weighted sum of grids sharing one spec. Values are not clipped."""
    parts = list(parts)
    if not parts:
        raise ValueError("nothing to combine")
    spec = parts[0][1].spec
    acc = np.zeros(spec.shape)
    for w, g in parts:
        if g.spec != spec:
            raise ValueError("cannot combine grids with different specs")
        acc += w * g.p
    return Pog(spec, acc)


def empty_pog(spec: GridSpec) -> Pog:
    return Pog(spec, np.zeros(spec.shape))


def to_bog(g: Pog, p_th: float) -> Bog:
    if p_th <= 0:
        raise ValueError("threshold must be positive")
    return Bog(g.spec, (g.p >= p_th).astype(np.uint8))


def write_matrix(f: TextIO, m: np.ndarray, fmt: str = "%.6g") -> None:
    """Plain-text matrix dump: one line per lateral index ``j``, values along ``i``."""
    for row in np.asarray(m).T:
        f.write(" ".join(fmt % v for v in row.tolist()))
        f.write("\n")


def read_matrix(f: TextIO) -> np.ndarray:
    rows = [[float(v) for v in line.split()] for line in f if line.strip()]
    return np.array(rows).T
