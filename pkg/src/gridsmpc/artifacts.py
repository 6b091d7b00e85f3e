"""Files written by the command-line tools: CSV logs, metrics JSON and SVG drawings.

Floats are written with ``repr`` so every CSV parses back to the exact values.
Wall-clock plan times go to their own file; everything else is a pure
function of the scenario and seed.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np

from .grid import GridSpec
from .simulation import Scenario, SimLog

TRAJ_BASE = ["t", "x", "y", "psi", "v", "delta_f", "a", "target_lane"]
TIMING_COLUMNS = [
    "t", "plan_time_total_s", "plan_time_grid_s", "plan_time_hull_s", "plan_time_solve_s",
]
HULL_COLUMNS = ["t", "h"] + [f"v{k}{c}" for k in range(1, 5) for c in "xy"]


def _f(v: float) -> str:
    return repr(float(v))


def trajectory_columns(n_tvs: int) -> list[str]:
    cols = list(TRAJ_BASE)
    for k in range(1, n_tvs + 1):
        cols += [f"tv{k}_x", f"tv{k}_vx", f"tv{k}_y", f"tv{k}_vy"]
    return cols + ["slack_total"]


def _write(path: Path, header: list[str], rows) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    path.write_text(buf.getvalue(), encoding="utf-8")


def write_trajectory_csv(path: Path, sim: SimLog, n_tvs: int) -> None:
    rows = []
    for r in sim.records:
        row = [r.t, r.ev.x, r.ev.y, r.ev.psi, r.ev.v, r.u.delta_f, r.u.a, r.target_lane]
        for tv in r.tvs:
            row += [tv.x, tv.vx, tv.y, tv.vy]
        row.append(r.slack_total)
        rows.append([_f(v) for v in row])
    _write(path, trajectory_columns(n_tvs), rows)


def write_timings_json(path: Path, sim: SimLog) -> None:
    """Wall-clock phase times per step. Kept out of the CSVs so those stay
    byte-identical across runs with the same seed."""
    rows = [
        [r.t, r.plan_time_total, r.plan_time_grid, r.plan_time_hull, r.plan_time_solve]
        for r in sim.records
    ]
    doc = {"columns": TIMING_COLUMNS, "rows": rows}
    path.write_text(json.dumps(doc) + "\n", encoding="utf-8")


def write_hull_csv(path: Path, sim: SimLog) -> None:
    rows = []
    for r in sim.records:
        for h, hv in enumerate(r.hulls, start=1):
            pts = hv.points()
            rows.append([_f(r.t), str(h)] + [_f(v) for p in pts for v in p])
    _write(path, HULL_COLUMNS, rows)


def read_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Header and a float matrix. Inverse of the writers above."""
    with open(path, newline="", encoding="utf-8") as f:
        rows = list(csv.reader(f))
    header, body = rows[0], rows[1:]
    data = np.array([[float(v) for v in row] for row in body], dtype=float)
    return header, data.reshape(len(body), len(header))


def metrics(sim: SimLog) -> dict:
    times = sim.plan_times
    events = [
        {
            "t": round(e.t, 9),
            "target_lane": e.target_lane,
            "reason": e.reason,
            "tv_index": e.tv_index,
            "dx": e.dx,
            "distance": None if e.dx is None else abs(e.dx),
        }
        for e in sim.lane_changes
    ]
    return {
        "scenario": sim.scenario,
        "collision": sim.collision,
        "failed": sim.failed,
        "error": sim.error,
        "steps": len(sim.records),
        "lane_changes": events,
        "lc_completion_distances": [ev["distance"] for ev in events],
        "plan_time_mean_s": float(times.mean()) if len(times) else None,
        "plan_time_std_s": float(times.std()) if len(times) else None,
        "max_slack": max((r.slack_total for r in sim.records), default=0.0),
        "fallback_plans": sum(1 for r in sim.records if r.fallback_steps),
    }


def write_metrics(path: Path, sim: SimLog) -> None:
    path.write_text(json.dumps(metrics(sim), indent=2) + "\n", encoding="utf-8")


# -- SVG ----------------------------------------------------------------------

_SCALE = 8.0  # px per meter


def _rect(x, y, psi, length, width, x0, height, style) -> str:
    c, s = math.cos(psi), math.sin(psi)
    pts = []
    for lx, ly in ((length / 2, width / 2), (-length / 2, width / 2),
                   (-length / 2, -width / 2), (length / 2, -width / 2)):
        wx, wy = x + c * lx - s * ly, y + s * lx + c * ly
        pts.append(f"{(wx - x0) * _SCALE:.2f},{(height - wy) * _SCALE:.2f}")
    return f'<polygon points="{" ".join(pts)}" {style}/>'


def render_snapshot(s: Scenario, sim: SimLog, k: int, before: float = 15.0,
                    ahead: float = 75.0) -> str:
    """Top-down view of step ``k``: road, vehicles and the first-step hull."""
    r = sim.records[k]
    x0 = r.ev.x - before
    w = before + ahead
    height = s.road_width
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * _SCALE:.0f}" '
        f'height="{height * _SCALE:.0f}">',
        f'<rect width="100%" height="100%" fill="#dddddd"/>',
    ]
    for lane in range(1, s.lanes):
        yy = (height - lane * s.lane_width) * _SCALE
        out.append(f'<line x1="0" y1="{yy:.2f}" x2="{w * _SCALE:.0f}" y2="{yy:.2f}" '
                   'stroke="white" stroke-dasharray="12,8"/>')
    if r.hulls:
        pts = " ".join(
            f"{(px - x0) * _SCALE:.2f},{(height - py) * _SCALE:.2f}" for px, py in r.hulls[0].points()
        )
        out.append(f'<polygon points="{pts}" fill="#7fc8f8" fill-opacity="0.5" stroke="#1f77b4"/>')
    cfg = s.config
    for tv in r.tvs:
        out.append(_rect(tv.x, tv.y, 0.0, cfg.tv_length, cfg.tv_width, x0, height,
                         'fill="#d62728" stroke="black"'))
    out.append(_rect(r.ev.x, r.ev.y, r.ev.psi, s.ev_params.length, s.ev_params.width, x0, height,
                     'fill="#1f77b4" stroke="black"'))
    out.append(f'<text x="4" y="12" font-size="11">t = {r.t:.1f} s</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_heatmap(spec: GridSpec, field: np.ndarray, p_th: float) -> str:
    """Cell-wise gray-scale drawing of a grid; cells at or above ``p_th`` get a red outline."""
    px = 6
    top = float(field.max()) if field.size and field.max() > 0 else 1.0
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{spec.nx * px}" height="{spec.ny * px}">'
    ]
    for i in range(spec.nx):
        for j in range(spec.ny):
            v = float(field[i, j])
            if v <= 0:
                continue
            g = int(round(255 * (1 - min(v / top, 1.0))))
            extra = ' stroke="red" stroke-width="0.5"' if v >= p_th else ""
            out.append(
                f'<rect x="{i * px}" y="{(spec.ny - 1 - j) * px}" width="{px}" height="{px}" '
                f'fill="rgb({g},{g},{g})"{extra}/>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"
