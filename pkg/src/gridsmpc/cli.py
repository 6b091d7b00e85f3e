"""Command-line entry point.

    gridsmpc run --scenario overtake_2tv --out runs/a
    gridsmpc bench --tvs 1,2,3 --runs 10 --out runs/bench
    gridsmpc grid-dump --scenario overtake_2tv --t 0 --h 10 --out runs/grid

Exit codes: 0 ok, 1 configuration error, 2 collision or failed run,
3 scaling regression in ``bench``. Set ``GRIDSMPC_LOG`` (e.g. ``DEBUG``)
for log output.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path

import click
import numpy as np
from scipy import ndimage

from . import artifacts
from .ev_model import EvState
from .pog import to_bog, write_matrix
from .scenario_io import ScenarioError, load_scenario
from .simulation import Scenario, TvSpec, run_closed_loop
from .smpc import TrackedTv, itsc2020_config, occupancy_grids
from .tv_prediction import ManeuverHypothesis, ManeuverKind, TvState

EXIT_OK, EXIT_CONFIG, EXIT_FAILED, EXIT_REGRESSION = 0, 1, 2, 3
SCALING_LIMIT = 1.5

log = logging.getLogger("gridsmpc")


class ConfigError(Exception):
    pass


def _prepare_out(out: Path, force: bool) -> Path:
    if out.exists() and not out.is_dir():
        raise ConfigError(f"--out {out}: exists and is not a directory")
    if out.is_dir() and any(out.iterdir()) and not force:
        raise ConfigError(f"--out {out}: directory is not empty (use --force to overwrite)")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load(ref: str, seed: int | None) -> Scenario:
    try:
        s = load_scenario(ref)
    except ScenarioError as exc:
        raise ConfigError(str(exc)) from None
    return s if seed is None else replace(s, seed=seed)


@click.group()
def cli():
    """Grid-based stochastic MPC highway planner."""


@cli.command()
@click.option("--scenario", "scenario_ref", required=True,
              help="Scenario TOML file or bundled scenario name.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=None, help="Override the scenario seed.")
@click.option("--render", is_flag=True, help="Write SVG snapshots.")
@click.option("--render-every", type=float, default=5.0, show_default=True,
              help="Seconds between rendered snapshots.")
@click.option("--force", is_flag=True, help="Overwrite a nonempty output directory.")
def run(scenario_ref, out, seed, render, render_every, force):
    """Closed-loop run of one scenario."""
    s = _load(scenario_ref, seed)
    out = _prepare_out(out, force)
    sim = run_closed_loop(s)
    n = len(s.tvs)
    artifacts.write_trajectory_csv(out / "trajectory.csv", sim, n)
    artifacts.write_hull_csv(out / "hulls.csv", sim)
    artifacts.write_timings_json(out / "timings.json", sim)
    artifacts.write_metrics(out / "metrics.json", sim)
    if render and sim.records:
        every = max(1, int(round(render_every / s.config.dt)))
        picks = sorted(set(range(0, len(sim.records), every)) | {len(sim.records) - 1})
        for k in picks:
            (out / f"snapshot_{k:04d}.svg").write_text(
                artifacts.render_snapshot(s, sim, k), encoding="utf-8"
            )
    m = artifacts.metrics(sim)
    click.echo(f"{s.name}: {m['steps']} steps, collision={m['collision']}, failed={m['failed']}")
    for e in m["lane_changes"]:
        click.echo(f"  lane change done t={e['t']:.1f}s -> y={e['target_lane']} "
                   f"({e['reason']}), |dx|={e['distance']}")
    if sim.failed:
        click.echo(f"run failed: {sim.error}", err=True)
        sys.exit(EXIT_FAILED)


def bench_scenario(n_tvs: int, run_index: int, seed: int, duration: float) -> Scenario:
    """Randomized benchmark setup: EV on a random lane with a random reference
    lane, the first TV 40 m ahead and one more every 50 m, each on a random lane
    with a maneuver probability drawn from [0.8, 1]."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, n_tvs, run_index]))
    cfg = itsc2020_config()
    lanes = (1.75, 5.25)
    ev_lane = int(rng.integers(2))
    ev_ref = int(rng.integers(2))
    ev = EvState(10.0, lanes[ev_lane], 0.0, 26.0)
    tvs = []
    for k in range(n_tvs):
        lane = int(rng.integers(2))
        p = float(rng.uniform(0.8, 1.0))
        lk_likely = bool(rng.integers(2))
        p_lk = p if lk_likely else 1.0 - p
        tvs.append(TvSpec(
            TvState(ev.x + 40.0 + 50.0 * k, 27.0, lanes[lane], 0.0),
            (ManeuverHypothesis(ManeuverKind.LANE_KEEP, p_lk, lanes[lane], 27.0),
             ManeuverHypothesis(ManeuverKind.LANE_CHANGE, 1.0 - p_lk, lanes[1 - lane], 27.0)),
        ))
    return Scenario(ev, tuple(tvs), duration=duration, seed=seed, config=cfg,
                    name=f"bench_{n_tvs}tv_{run_index}", target_lane=lanes[ev_ref])


def _parse_counts(text: str) -> list[int]:
    try:
        counts = [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"--tvs {text!r}: expected comma separated integers") from None
    if not counts or any(c < 1 for c in counts):
        raise ConfigError("--tvs: every count must be at least 1")
    return counts


@cli.command()
@click.option("--tvs", "tvs_text", default="1,2,3", show_default=True)
@click.option("--runs", type=click.IntRange(min=1), default=10, show_default=True)
@click.option("--duration", type=click.FloatRange(min=0.0), default=4.0, show_default=True,
              help="Simulated seconds per run.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--force", is_flag=True)
def bench(tvs_text, runs, duration, seed, out, force):
    """Planning time per iteration versus number of TVs."""
    counts = _parse_counts(tvs_text)
    out = _prepare_out(out, force)
    setups = []
    table = []
    for n in counts:
        times = []
        failures = 0
        for r in range(runs):
            s = bench_scenario(n, r, seed, duration)
            setups.append(s)
            sim = run_closed_loop(s)
            failures += sim.failed
            times.extend(sim.plan_times.tolist())
        arr = np.array(times)
        row = (n, runs, len(arr), float(arr.mean()) if len(arr) else math.nan,
               float(arr.std()) if len(arr) else math.nan, failures)
        table.append(row)
        click.echo(f"TVs={n}: mu={row[3]:.4f}s sigma={row[4]:.4f}s "
                   f"({row[2]} iterations, {failures} failed runs)")

    # counts are deterministic; wall-clock statistics go to JSON
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["n_tvs", "runs", "iterations", "failed_runs"])
    w.writerows([(n, r, it, f) for n, r, it, _, _, f in table])
    (out / "bench.csv").write_text(buf.getvalue(), encoding="utf-8")

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["name", "ev_y", "ev_target", "tv", "tv_x", "tv_y", "p_lk", "p_lc"])
    for s in setups:
        for k, tv in enumerate(s.tvs):
            w.writerow([s.name, repr(s.ev_init.y), repr(s.target_lane), k, repr(tv.init.x),
                        repr(tv.init.y), repr(tv.hypotheses[0].probability),
                        repr(tv.hypotheses[1].probability)])
    (out / "bench_setups.csv").write_text(buf.getvalue(), encoding="utf-8")

    lo = min(table, key=lambda r: r[0])
    hi = max(table, key=lambda r: r[0])
    ratio = hi[3] / lo[3]
    click.echo(f"mu({hi[0]})/mu({lo[0]}) = {ratio:.3f} (limit {SCALING_LIMIT})")
    doc = {
        "rows": [dict(n_tvs=n, runs=r, iterations=it, mean_s=mu, std_s=sd, failed_runs=f)
                 for n, r, it, mu, sd, f in table],
        "ratio": ratio, "ratio_counts": [hi[0], lo[0]], "limit": SCALING_LIMIT,
    }
    (out / "bench.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    if ratio > SCALING_LIMIT:
        sys.exit(EXIT_REGRESSION)


def connected_blobs(field: np.ndarray, p_th: float) -> int:
    """Number of 4-connected regions at or above ``p_th``."""
    _, n = ndimage.label(field >= p_th)
    return int(n)


@cli.command("grid-dump")
@click.option("--scenario", "scenario_ref", required=True)
@click.option("--t", "t_sim", type=float, required=True, help="Simulated time in seconds.")
@click.option("--h", "h", type=int, required=True, help="Prediction step, 0..N.")
@click.option("--out", type=click.Path(path_type=Path), required=True)
@click.option("--seed", type=int, default=None)
@click.option("--force", is_flag=True)
def grid_dump(scenario_ref, t_sim, h, out, seed, force):
    """Fused probabilistic grid and its binary threshold at time t, step h."""
    s = _load(scenario_ref, seed)
    cfg = s.config
    if not 0 <= h <= cfg.N:
        raise ConfigError(f"--h {h}: must lie in 0..{cfg.N}")
    if t_sim < 0 or t_sim > s.duration + 1e-9:
        raise ConfigError(f"--t {t_sim}: must lie in 0..{s.duration}")
    out = _prepare_out(out, force)

    ev, tvs = s.ev_init, [tv.init for tv in s.tvs]
    if t_sim > 0:
        sim = run_closed_loop(replace(s, duration=t_sim))
        if not sim.records:
            click.echo(f"run failed before t={t_sim}: {sim.error}", err=True)
            sys.exit(EXIT_FAILED)
        last = sim.records[-1]
        ev, tvs = last.ev, list(last.tvs)
    tracked = [TrackedTv(st, s.tv_model, spec.hypotheses) for st, spec in zip(tvs, s.tvs)]
    spec, pogs = occupancy_grids(cfg, ev, tracked)
    pog = pogs[h]
    bog = to_bog(pog, cfg.p_th)
    with open(out / f"pog_h{h:02d}.txt", "w", encoding="utf-8") as f:
        write_matrix(f, pog.p, "%r")
    with open(out / f"bog_h{h:02d}.txt", "w", encoding="utf-8") as f:
        write_matrix(f, bog.b, "%d")
    (out / f"pog_h{h:02d}.svg").write_text(
        artifacts.render_heatmap(spec, pog.p, cfg.p_th), encoding="utf-8"
    )
    meta = {
        "t": t_sim, "h": h,
        "grid": {"origin_x": spec.origin_x, "origin_y": spec.origin_y,
                 "cx": spec.cx, "cy": spec.cy, "nx": spec.nx, "ny": spec.ny},
        "p_th": cfg.p_th,
        "occupied_cells": int(bog.b.sum()),
        "blobs": connected_blobs(pog.p, cfg.p_th),
    }
    (out / "grid.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    click.echo(f"h={h}: {meta['occupied_cells']} occupied cells in {meta['blobs']} blobs")


def main(argv: list[str] | None = None) -> int:
    level = os.environ.get("GRIDSMPC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cli.main(args=argv, prog_name="gridsmpc", standalone_mode=False)
    except ConfigError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    except click.exceptions.Abort:
        return EXIT_CONFIG
    except click.ClickException as exc:
        exc.show()
        return EXIT_CONFIG
    except SystemExit as exc:
        return int(exc.code or 0)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
