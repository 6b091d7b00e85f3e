"""TOML scenario files.

A scenario file carries a ``schema`` key so the format can evolve::

    schema = "gridsmpc.scenario/1"
    preset = "itsc2020"
    duration = 40.0

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
    hypotheses = [{kind = "LK", probability = 0.8, target_lane = 5.25, cruise_speed = 27.0}]

    [planner]          # optional overrides of the preset
    detection_range = 20.0
"""

from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np
import tomli

from .ev_model import EvParams, EvState
from .simulation import Scenario, TvSpec
from .smpc import PlannerConfig, itsc2020_config
from .tv_prediction import ManeuverHypothesis, ManeuverKind, TvState

SCHEMA = "gridsmpc.scenario/1"
PRESETS = {"itsc2020": itsc2020_config}

_TOP_KEYS = {
    "schema", "name", "preset", "duration", "seed", "noise_on", "lanes", "lane_width",
    "ev", "ev_params", "tvs", "planner", "target_lane",
}
_PLANNER_SCALARS = {
    "N": int, "dt": float, "p_th": float, "v_ref": float, "slack_weight": float,
    "solver_tol": float, "max_iters": int, "cx": float, "cy": float,
    "detection_range": float, "grid_behind": float, "tv_length": float, "tv_width": float,
}
_PLANNER_PAIRS = ("y_bounds", "a_bounds")
_PLANNER_STRINGS = ("cell_values",)


class ScenarioError(ValueError):
    """Malformed scenario file. The message names the offending line or field."""


def _num(value: Any, where: str, kind=float):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"field '{where}': expected a number, got {value!r}")
    if kind is int:
        if isinstance(value, float) and not value.is_integer():
            raise ScenarioError(f"field '{where}': expected an integer, got {value!r}")
        return int(value)
    if not math.isfinite(value):
        raise ScenarioError(f"field '{where}': must be finite")
    return float(value)


def _table(doc: dict, key: str, where: str) -> dict:
    if key not in doc:
        raise ScenarioError(f"field '{where}': missing")
    if not isinstance(doc[key], dict):
        raise ScenarioError(f"field '{where}': expected a table")
    return doc[key]


def _fields(table: dict, names: tuple[str, ...], where: str) -> list[float]:
    extra = set(table) - set(names)
    if extra:
        raise ScenarioError(f"field '{where}.{sorted(extra)[0]}': unknown key")
    out = []
    for n in names:
        if n not in table:
            raise ScenarioError(f"field '{where}.{n}': missing")
        out.append(_num(table[n], f"{where}.{n}"))
    return out


def _hypothesis(h: Any, where: str) -> ManeuverHypothesis:
    if not isinstance(h, dict):
        raise ScenarioError(f"field '{where}': expected a table")
    try:
        kind = ManeuverKind(h.get("kind"))
    except ValueError:
        raise ScenarioError(f"field '{where}.kind': expected 'LK' or 'LC', got {h.get('kind')!r}")
    p, lane, cruise = _fields(
        {k: v for k, v in h.items() if k != "kind"},
        ("probability", "target_lane", "cruise_speed"),
        where,
    )
    return ManeuverHypothesis(kind, p, lane, cruise)


def _planner(doc: dict) -> PlannerConfig:
    preset = doc.get("preset", "itsc2020")
    if preset not in PRESETS:
        raise ScenarioError(f"field 'preset': unknown preset {preset!r}")
    over: dict[str, Any] = {}
    raw = doc.get("planner", {})
    if not isinstance(raw, dict):
        raise ScenarioError("field 'planner': expected a table")
    for key, value in raw.items():
        where = f"planner.{key}"
        if key in _PLANNER_SCALARS:
            over[key] = _num(value, where, _PLANNER_SCALARS[key])
        elif key in _PLANNER_STRINGS:
            if not isinstance(value, str):
                raise ScenarioError(f"field '{where}': expected a string")
            over[key] = value
        elif key in _PLANNER_PAIRS or key == "delta_bounds_deg":
            if not isinstance(value, list) or len(value) != 2:
                raise ScenarioError(f"field '{where}': expected [low, high]")
            lo, hi = (_num(v, where) for v in value)
            if key == "delta_bounds_deg":
                over["delta_bounds"] = (math.radians(lo), math.radians(hi))
            else:
                over[key] = (lo, hi)
        elif key in ("Q_diag", "R_diag", "S_diag"):
            n = 2 if key == "R_diag" else 4
            if not isinstance(value, list) or len(value) != n:
                raise ScenarioError(f"field '{where}': expected {n} numbers")
            over[key[0]] = np.diag([_num(v, where) for v in value])
        else:
            raise ScenarioError(f"field '{where}': unknown key")
    try:
        return PRESETS[preset](**over)
    except ValueError as exc:
        raise ScenarioError(f"field 'planner': {exc}") from None


def parse_scenario(text: str, default_name: str = "scenario") -> Scenario:
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ScenarioError(f"TOML parse error: {exc}") from None

    if doc.get("schema") != SCHEMA:
        raise ScenarioError(f"field 'schema': expected {SCHEMA!r}, got {doc.get('schema')!r}")
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ScenarioError(f"field '{sorted(unknown)[0]}': unknown key")

    cfg = _planner(doc)
    x, y, psi, v = _fields(_table(doc, "ev", "ev"), ("x", "y", "psi", "v"), "ev")
    params = EvParams()
    if "ev_params" in doc:
        lr, lf, length, width = _fields(
            _table(doc, "ev_params", "ev_params"), ("lr", "lf", "length", "width"), "ev_params"
        )
        params = EvParams(lr, lf, length, width)

    raw_tvs = doc.get("tvs", [])
    if not isinstance(raw_tvs, list):
        raise ScenarioError("field 'tvs': expected an array of tables")
    tvs = []
    for k, t in enumerate(raw_tvs):
        where = f"tvs[{k}]"
        if not isinstance(t, dict):
            raise ScenarioError(f"field '{where}': expected a table")
        hyps_raw = t.get("hypotheses")
        if not isinstance(hyps_raw, list) or not hyps_raw:
            raise ScenarioError(f"field '{where}.hypotheses': expected a nonempty array")
        state = _fields(
            {kk: vv for kk, vv in t.items() if kk != "hypotheses"}, ("x", "vx", "y", "vy"), where
        )
        hyps = tuple(_hypothesis(h, f"{where}.hypotheses[{i}]") for i, h in enumerate(hyps_raw))
        try:
            tvs.append(TvSpec(TvState(*state), hyps))
        except ValueError as exc:
            raise ScenarioError(f"field '{where}.hypotheses': {exc}") from None

    lanes = _num(doc.get("lanes", 2), "lanes", int)
    lane_width = _num(doc.get("lane_width", 3.5), "lane_width")
    if lanes < 1 or lane_width <= 0:
        raise ScenarioError("field 'lanes': need at least one lane of positive width")
    if abs(lanes * lane_width - cfg.road_width) > 1e-9:
        cfg = cfg.with_(road_width=lanes * lane_width)
    noise_on = doc.get("noise_on", False)
    if not isinstance(noise_on, bool):
        raise ScenarioError("field 'noise_on': expected true or false")
    name = doc.get("name", default_name)
    if not isinstance(name, str):
        raise ScenarioError("field 'name': expected a string")
    try:
        return Scenario(
            ev_init=EvState(x, y, psi, v),
            tvs=tuple(tvs),
            lanes=lanes,
            lane_width=lane_width,
            duration=_num(doc.get("duration", 30.0), "duration"),
            seed=_num(doc.get("seed", 0), "seed", int),
            noise_on=noise_on,
            config=cfg,
            ev_params=params,
            name=name,
            target_lane=None if "target_lane" not in doc else _num(doc["target_lane"], "target_lane"),
        )
    except ValueError as exc:
        raise ScenarioError(f"scenario: {exc}") from None


def bundled_names() -> list[str]:
    root = resources.files("gridsmpc.scenarios")
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".toml"))


def load_scenario(ref: str | Path) -> Scenario:
    """Load a scenario from a file path or by the name of a bundled scenario."""
    path = Path(ref)
    if path.is_file():
        return parse_scenario(path.read_text(encoding="utf-8"), path.stem)
    name = str(ref)
    if name in bundled_names():
        text = resources.files("gridsmpc.scenarios").joinpath(f"{name}.toml").read_text("utf-8")
        return parse_scenario(text, name)
    raise ScenarioError(f"scenario {name!r}: no such file or bundled scenario")
