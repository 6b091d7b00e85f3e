"""Independent reference implementations used by the tests."""

from fractions import Fraction


def segment_touches_cell(c0, c1, cell) -> bool:
    """Exact test: does the segment between the centers of ``c0`` and ``c1``
    meet the closed unit square of ``cell`` (index coordinates)?"""
    p0 = (Fraction(2 * c0[0] + 1, 2), Fraction(2 * c0[1] + 1, 2))
    p1 = (Fraction(2 * c1[0] + 1, 2), Fraction(2 * c1[1] + 1, 2))
    t_lo, t_hi = Fraction(0), Fraction(1)
    for axis in (0, 1):
        lo, hi = Fraction(cell[axis]), Fraction(cell[axis] + 1)
        d = p1[axis] - p0[axis]
        if d == 0:
            if not lo <= p0[axis] <= hi:
                return False
            continue
        ta, tb = (lo - p0[axis]) / d, (hi - p0[axis]) / d
        if ta > tb:
            ta, tb = tb, ta
        t_lo, t_hi = max(t_lo, ta), min(t_hi, tb)
        if t_lo > t_hi:
            return False
    return True


def enumerate_touched(c0, c1) -> set:
    i_lo, i_hi = sorted((c0[0], c1[0]))
    j_lo, j_hi = sorted((c0[1], c1[1]))
    return {
        (i, j)
        for i in range(i_lo - 1, i_hi + 2)
        for j in range(j_lo - 1, j_hi + 2)
        if segment_touches_cell(c0, c1, (i, j))
    }


def winding_number(point, polygon) -> int:
    """Winding number of a closed polygon around ``point`` (boundary excluded)."""
    x, y = point
    wn = 0
    n = len(polygon)
    for k in range(n):
        (x0, y0), (x1, y1) = polygon[k], polygon[(k + 1) % n]
        cross = (x1 - x0) * (y - y0) - (x - x0) * (y1 - y0)
        if y0 <= y < y1 and cross > 0:
            wn += 1
        elif y1 <= y < y0 and cross < 0:
            wn -= 1
    return wn
