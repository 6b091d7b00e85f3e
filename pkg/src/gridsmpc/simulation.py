"""Closed-loop highway simulation around the grid-based planner."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import ev_model
from .ev_model import EvInput, EvParams, EvState
from .smpc import (
    InfeasibleStartError,
    PlannerConfig,
    PlanResult,
    TrackedTv,
    plan_step,
    shift_warm_start,
)
from .tv_prediction import (
    ManeuverHypothesis,
    TvModel,
    TvState,
    check_hypotheses,
    most_likely,
    tv_truth_step,
)

log = logging.getLogger(__name__)

ALONGSIDE_RANGE = 20.0
OVERTAKE_GAP = 15.0


@dataclass(frozen=True)
class TvSpec:
    init: TvState
    hypotheses: tuple[ManeuverHypothesis, ...]

    def __post_init__(self):
        check_hypotheses(self.hypotheses)


@dataclass(frozen=True)
class Scenario:
    ev_init: EvState
    tvs: tuple[TvSpec, ...] = ()
    lanes: int = 2
    lane_width: float = 3.5
    duration: float = 30.0
    seed: int = 0
    noise_on: bool = False
    config: PlannerConfig = field(default_factory=PlannerConfig)
    ev_params: EvParams = field(default_factory=EvParams)
    tv_model: TvModel | None = None
    name: str = "scenario"
    # initial reference lane center; defaults to the center of the EV's lane
    target_lane: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.ev_init.y <= self.road_width:
            raise ValueError("EV initial y lies outside the road")
        if self.duration < 0:
            raise ValueError("duration must be nonnegative")
        if self.tv_model is None:
            from .tv_prediction import TvModel

            object.__setattr__(self, "tv_model", TvModel.point_mass(self.config.dt))

    @property
    def road_width(self) -> float:
        return self.lanes * self.lane_width

    def lane_center(self, k: int) -> float:
        return (k + 0.5) * self.lane_width

    def lane_index(self, y: float) -> int:
        return int(min(max(math.floor(y / self.lane_width), 0), self.lanes - 1))


# -- geometry ---------------------------------------------------------------


def _corners(x, y, psi, length, width) -> np.ndarray:
    c, s = math.cos(psi), math.sin(psi)
    hl, hw = length / 2, width / 2
    local = np.array([[hl, hw], [-hl, hw], [-hl, -hw], [hl, -hw]])
    rot = np.array([[c, -s], [s, c]])
    return local @ rot.T + np.array([x, y])


def check_collision(
    ev: EvState, ev_dims: tuple[float, float], tv: TvState, tv_dims: tuple[float, float]
) -> bool:
    """Separating-axis overlap test between the rotated EV box and the axis-aligned TV box.

    Touching edges count as a collision.
    """
    a = _corners(ev.x, ev.y, ev.psi, *ev_dims)
    b = _corners(tv.x, tv.y, 0.0, *tv_dims)
    c, s = math.cos(ev.psi), math.sin(ev.psi)
    for axis in (np.array([c, s]), np.array([-s, c]), np.array([1.0, 0.0]), np.array([0.0, 1.0])):
        pa, pb = a @ axis, b @ axis
        if pa.max() < pb.min() or pb.max() < pa.min():
            return False
    return True


def footprint_in_lane(ev: EvState, params: EvParams, lane_lo: float, lane_hi: float) -> bool:
    ys = _corners(ev.x, ev.y, ev.psi, params.length, params.width)[:, 1]
    return bool(ys.min() >= lane_lo and ys.max() <= lane_hi)


# -- lane policy --------------------------------------------------------------


@dataclass
class PolicyState:
    """Memory of the lane policy across steps."""

    seen_ahead: set[int] = field(default_factory=set)
    overtaken: set[int] = field(default_factory=set)
    reason: str = ""
    tv_index: int | None = None


def lane_policy(
    ev: EvState,
    tvs: list[TvState],
    current_target: float,
    lane_width: float = 3.5,
    lanes: int = 2,
    state: PolicyState | None = None,
) -> float:
    """Reference lane center for the EV.

    1. A TV in the EV's lane between 0 and 20 m ahead (CoG distance) sends the
       EV to the nearest free lane.
    2. Once the EV is more than 15 m past a TV it had been behind, it returns
       to that TV's lane, once per TV.

    Rule 1 wins over rule 2. With no trigger the current target is kept.
    """
    st = state if state is not None else PolicyState()

    def lane_of(y):
        return int(min(max(math.floor(y / lane_width), 0), lanes - 1))

    def center(k):
        return (k + 0.5) * lane_width

    ev_lane = lane_of(ev.y)
    for k, tv in enumerate(tvs):
        if tv.x > ev.x:
            st.seen_ahead.add(k)

    blocking = [
        k for k, tv in enumerate(tvs)
        if lane_of(tv.y) == ev_lane and 0.0 < tv.x - ev.x <= ALONGSIDE_RANGE
    ]
    if blocking:
        def occupied(lane):
            return any(
                lane_of(tv.y) == lane and abs(tv.x - ev.x) <= ALONGSIDE_RANGE for tv in tvs
            )

        free = [k for k in range(lanes) if k != ev_lane and not occupied(k)]
        if free:
            best = min(free, key=lambda k: (abs(k - ev_lane), -k))
            if center(best) != current_target:
                st.reason, st.tv_index = "blocked", blocking[0]
            return center(best)
        return current_target

    passed = [
        k for k, tv in enumerate(tvs)
        if k in st.seen_ahead and k not in st.overtaken and ev.x - tv.x > OVERTAKE_GAP
    ]
    if passed:
        k = min(passed, key=lambda k: ev.x - tvs[k].x)
        st.overtaken.add(k)
        target = center(lane_of(tvs[k].y))
        if target != current_target:
            st.reason, st.tv_index = "overtake", k
        return target
    return current_target


# -- closed loop --------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class StepRecord:
    t: float
    ev: EvState
    u: EvInput
    tvs: tuple[TvState, ...]
    target_lane: float
    plan_time_total: float
    plan_time_grid: float
    plan_time_hull: float
    plan_time_solve: float
    slack_total: float
    status: str
    fallback_steps: tuple[int, ...]
    hulls: tuple  # HullVertices per prediction step


@dataclass(frozen=True)
class LaneChangeEvent:
    t: float
    target_lane: float
    reason: str
    tv_index: int | None
    # EV minus TV longitudinal CoG position at completion
    dx: float | None


@dataclass
class SimLog:
    scenario: str
    dt: float
    records: list[StepRecord] = field(default_factory=list)
    lane_changes: list[LaneChangeEvent] = field(default_factory=list)
    collision: bool = False
    failed: bool = False
    error: str = ""

    @property
    def plan_times(self) -> np.ndarray:
        return np.array([r.plan_time_total for r in self.records])


def _tv_seed(seed: int, step: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, step, index]).generate_state(1)[0])


def run_closed_loop(s: Scenario) -> SimLog:
    """Simulate the scenario at the planner's sampling time.

    Each step: choose the reference lane, plan, apply the first input to the
    EV and move every TV along its most likely maneuver. Stops at the end of
    the duration, on a planning failure or on a collision.
    """
    cfg = s.config
    dt = cfg.dt
    params = s.ev_params
    n_steps = int(math.floor(s.duration / dt + 1e-9))
    sim = SimLog(scenario=s.name, dt=dt)
    ev = s.ev_init
    tvs = [tv.init for tv in s.tvs]
    truth_hyps = [most_likely(tv.hypotheses) for tv in s.tvs]
    target = s.target_lane if s.target_lane is not None else s.lane_center(s.lane_index(ev.y))
    policy = PolicyState()
    pending: LaneChangeEvent | None = None
    warm = None
    ev_dims = (params.length, params.width)
    tv_dims = (cfg.tv_length, cfg.tv_width)

    for k in range(n_steps + 1):
        t = k * dt
        if any(check_collision(ev, ev_dims, tv, tv_dims) for tv in tvs):
            sim.collision = sim.failed = True
            sim.error = f"collision at t={t:.2f}"
            log.warning(sim.error)
            break

        new_target = lane_policy(ev, tvs, target, s.lane_width, s.lanes, policy)
        if new_target != target:
            pending = LaneChangeEvent(t, new_target, policy.reason, policy.tv_index, None)
            target = new_target
        if pending is not None:
            lo = target - s.lane_width / 2
            if footprint_in_lane(ev, params, lo, lo + s.lane_width):
                dx = None if pending.tv_index is None else ev.x - tvs[pending.tv_index].x
                sim.lane_changes.append(
                    LaneChangeEvent(t, target, pending.reason, pending.tv_index, dx)
                )
                pending = None

        tracked = [TrackedTv(st, s.tv_model, spec.hypotheses) for st, spec in zip(tvs, s.tvs)]
        try:
            plan: PlanResult = plan_step(cfg, params, ev, tracked, target, warm)
        except InfeasibleStartError as exc:
            sim.failed = True
            sim.error = f"planning failed at t={t:.2f}: {exc}"
            log.warning(sim.error)
            break

        u = plan.first_input
        sim.records.append(
            StepRecord(
                t=t,
                ev=ev,
                u=u,
                tvs=tuple(tvs),
                target_lane=target,
                plan_time_total=plan.timings.total,
                plan_time_grid=plan.timings.grid,
                plan_time_hull=plan.timings.hull,
                plan_time_solve=plan.timings.solve,
                slack_total=plan.slack_total,
                status=plan.status.value,
                fallback_steps=plan.fallback_steps,
                hulls=tuple(plan.hull_vertices),
            )
        )
        if k == n_steps:
            break
        ev = ev_model.discrete_step(params, ev, u, dt)
        tvs = [
            tv_truth_step(s.tv_model, st, hyp, s.noise_on, _tv_seed(s.seed, k, i))
            for i, (st, hyp) in enumerate(zip(tvs, truth_hyps))
        ]
        warm = shift_warm_start(plan)
    return sim
