import json

import numpy as np
import pytest
from scipy import ndimage

from gridsmpc import artifacts
from gridsmpc.cli import bench_scenario, main
from gridsmpc.pog import read_matrix
from gridsmpc.scenario_io import ScenarioError, load_scenario, parse_scenario
from gridsmpc.simulation import run_closed_loop

SHORT = """
schema = "gridsmpc.scenario/1"
name = "short"
duration = 1.0
seed = 3
noise_on = true

[ev]
x = 10.0
y = 5.25
psi = 0.0
v = 26.0

[[tvs]]
x = 40.0
vx = 27.0
y = 5.25
vy = 0.0
hypotheses = [
  { kind = "LK", probability = 0.8, target_lane = 5.25, cruise_speed = 27.0 },
  { kind = "LC", probability = 0.2, target_lane = 1.75, cruise_speed = 27.0 },
]
"""

EMPTY = """
schema = "gridsmpc.scenario/1"
duration = 1.0

[ev]
x = 0.0
y = 1.75
psi = 0.0
v = 30.0
"""


@pytest.fixture
def short_file(tmp_path):
    p = tmp_path / "short.toml"
    p.write_text(SHORT)
    return p


def test_bundled_scenario_has_the_highway_setup():
    s = load_scenario("overtake_2tv")
    assert (s.ev_init.x, s.ev_init.y, s.ev_init.psi, s.ev_init.v) == (10.0, 5.25, 0.0, 26.0)
    assert [(t.init.x, t.init.vx, t.init.y) for t in s.tvs] == [(40, 27, 5.25), (90, 27, 1.75)]
    assert [h.probability for h in s.tvs[0].hypotheses] == [0.8, 0.2]
    assert s.config.N == 20 and s.config.p_th == 0.15
    assert s.road_width == 7.0


def test_parse_errors_name_line_or_field(tmp_path, capsys):
    with pytest.raises(ScenarioError, match="line 3"):
        parse_scenario('schema = "gridsmpc.scenario/1"\n[ev]\nx = = 1\n')
    with pytest.raises(ScenarioError, match=r"tvs\[0\]\.hypotheses\[1\]\.probability"):
        parse_scenario(SHORT.replace("probability = 0.2", 'probability = "x"'))
    with pytest.raises(ScenarioError, match="schema"):
        parse_scenario(SHORT.replace("scenario/1", "scenario/9"))
    with pytest.raises(ScenarioError, match="planner.bogus"):
        parse_scenario(SHORT + "\n[planner]\nbogus = 1\n")
    with pytest.raises(ScenarioError, match="ev.v"):
        parse_scenario(SHORT.replace("v = 26.0", ""))

    bad = tmp_path / "bad.toml"
    bad.write_text(SHORT.replace("y = 5.25\npsi", "y = [\npsi"))
    assert main(["run", "--scenario", str(bad), "--out", str(tmp_path / "o")]) == 1
    assert "line" in capsys.readouterr().err


def test_planner_overrides():
    s = parse_scenario(SHORT + '\n[planner]\ndetection_range = 30.0\nR_diag = [1.0, 2.0]\n')
    assert s.config.detection_range == 30.0
    assert np.array_equal(np.diag(s.config.R), [1.0, 2.0])


def test_run_writes_artifacts_and_is_deterministic(tmp_path, short_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--scenario", str(short_file), "--out", str(a), "--seed", "7",
                 "--render"]) == 0
    assert main(["run", "--scenario", str(short_file), "--out", str(b), "--seed", "7"]) == 0
    for name in ("trajectory.csv", "hulls.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()
    m = json.loads((a / "metrics.json").read_text())
    assert m["collision"] is False and m["steps"] == 6
    assert sorted(p.name for p in a.glob("*.svg")) == ["snapshot_0000.svg", "snapshot_0005.svg"]

    timings = json.loads((a / "timings.json").read_text())
    assert timings["columns"] == artifacts.TIMING_COLUMNS and len(timings["rows"]) == 6
    assert not list(a.glob("timings.csv"))


def test_other_seed_changes_noisy_run(tmp_path, short_file):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--scenario", str(short_file), "--out", str(a), "--seed", "1"])
    main(["run", "--scenario", str(short_file), "--out", str(b), "--seed", "2"])
    assert (a / "trajectory.csv").read_bytes() != (b / "trajectory.csv").read_bytes()


def test_refuses_to_overwrite(tmp_path, short_file, capsys):
    out = tmp_path / "o"
    out.mkdir()
    (out / "keep.txt").write_text("x")
    assert main(["run", "--scenario", str(short_file), "--out", str(out)]) == 1
    assert "--force" in capsys.readouterr().err
    assert main(["run", "--scenario", str(short_file), "--out", str(out), "--force"]) == 0


def test_collision_exits_two(tmp_path):
    p = tmp_path / "crash.toml"
    p.write_text(SHORT.replace("x = 40.0", "x = 12.0"))
    assert main(["run", "--scenario", str(p), "--out", str(tmp_path / "o")]) == 2
    m = json.loads((tmp_path / "o" / "metrics.json").read_text())
    assert m["collision"] is True


def test_csv_round_trip(tmp_path, short_file):
    s = load_scenario(short_file)
    sim = run_closed_loop(s)
    artifacts.write_trajectory_csv(tmp_path / "t.csv", sim, len(s.tvs))
    artifacts.write_hull_csv(tmp_path / "h.csv", sim)
    header, data = artifacts.read_csv(tmp_path / "t.csv")
    assert header == artifacts.trajectory_columns(1)
    assert header[:8] == ["t", "x", "y", "psi", "v", "delta_f", "a", "target_lane"]
    for row, r in zip(data, sim.records):
        want = [r.t, r.ev.x, r.ev.y, r.ev.psi, r.ev.v, r.u.delta_f, r.u.a, r.target_lane,
                r.tvs[0].x, r.tvs[0].vx, r.tvs[0].y, r.tvs[0].vy, r.slack_total]
        assert row.tolist() == want
    header, hulls = artifacts.read_csv(tmp_path / "h.csv")
    assert header == artifacts.HULL_COLUMNS
    assert hulls.shape == (len(sim.records) * s.config.N, 10)
    first = sim.records[0].hulls[0].points()
    assert hulls[0, 2:].tolist() == [v for p in first for v in p]


def test_grid_dump_empty_road_is_zero(tmp_path):
    p = tmp_path / "empty.toml"
    p.write_text(EMPTY)
    assert main(["grid-dump", "--scenario", str(p), "--t", "0", "--h", "5",
                 "--out", str(tmp_path / "g")]) == 0
    with open(tmp_path / "g" / "pog_h05.txt") as f:
        assert not read_matrix(f).any()


def test_grid_dump_two_vehicles_two_blobs(tmp_path):
    out = tmp_path / "g"
    assert main(["grid-dump", "--scenario", "overtake_2tv", "--t", "0", "--h", "10",
                 "--out", str(out)]) == 0
    with open(out / "pog_h10.txt") as f:
        pog = read_matrix(f)
    with open(out / "bog_h10.txt") as f:
        bog = read_matrix(f)
    assert np.array_equal(bog, (pog >= 0.15).astype(float))
    _, n = ndimage.label(pog >= 0.15)
    assert bog.sum() > 0 and n == 2
    assert json.loads((out / "grid.json").read_text())["blobs"] == 2


def test_grid_dump_range_errors(tmp_path):
    assert main(["grid-dump", "--scenario", "overtake_2tv", "--t", "0", "--h", "21",
                 "--out", str(tmp_path / "g")]) == 1
    assert main(["grid-dump", "--scenario", "overtake_2tv", "--t", "-1", "--h", "2",
                 "--out", str(tmp_path / "g")]) == 1


def test_bench_rejects_zero_vehicles(tmp_path):
    assert main(["bench", "--tvs", "0", "--out", str(tmp_path / "b")]) == 1
    assert main(["bench", "--tvs", "1,x", "--out", str(tmp_path / "b")]) == 1


def test_bench_protocol_layout():
    s = bench_scenario(3, 4, 0, 1.0)
    xs = [tv.init.x for tv in s.tvs]
    assert xs == [s.ev_init.x + 40, s.ev_init.x + 90, s.ev_init.x + 140]
    for tv in s.tvs:
        probs = sorted(h.probability for h in tv.hypotheses)
        assert 0.8 <= probs[1] <= 1.0 and probs[0] == pytest.approx(1 - probs[1])
        assert tv.init.y in (1.75, 5.25)
    assert s.ev_init.y in (1.75, 5.25) and s.target_lane in (1.75, 5.25)
    again = bench_scenario(3, 4, 0, 1.0)
    assert again.ev_init == s.ev_init and again.target_lane == s.target_lane
    assert [tv.init for tv in again.tvs] == [tv.init for tv in s.tvs]
    assert [tv.hypotheses for tv in again.tvs] == [tv.hypotheses for tv in s.tvs]


def test_bench_small_run(tmp_path):
    out = tmp_path / "b"
    code = main(["bench", "--tvs", "1,2", "--runs", "1", "--duration", "0.4", "--out", str(out)])
    assert code in (0, 3)
    header, data = artifacts.read_csv(out / "bench.csv")
    assert header == ["n_tvs", "runs", "iterations", "failed_runs"]
    assert data[:, 0].tolist() == [1, 2] and data[:, 2].tolist() == [3, 3]
    assert (out / "bench_setups.csv").exists()
    doc = json.loads((out / "bench.json").read_text())
    assert [r["n_tvs"] for r in doc["rows"]] == [1, 2]
    assert doc["ratio"] == doc["rows"][1]["mean_s"] / doc["rows"][0]["mean_s"]
