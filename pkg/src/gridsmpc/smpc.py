"""Grid-based stochastic MPC: occupancy prediction, hull extraction and the OCP solve."""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import ev_model
from .ev_model import EvInput, EvParams, EvState
from .freespace import (
    HullNotFoundError,
    HullVertices,
    Polytope,
    admissible_safe_space,
    vertices_to_halfspaces,
)
from .grid import GridSpec, cell_to_world, road_grid
from .pog import Bog, Pog, build_tv_pog, combine_pogs, empty_pog, position_block, to_bog
from .tv_prediction import (
    ManeuverHypothesis,
    TvModel,
    TvState,
    predict_tv_mean_array,
    propagate_covariance,
)

log = logging.getLogger(__name__)


class InfeasibleStartError(RuntimeError):
    """No admissible hull exists for the first prediction step."""


class NumericalError(ArithmeticError):
    pass


class SolveStatus(str, enum.Enum):
    CONVERGED = "converged"
    MAX_ITERS = "max_iters"
    # solver stopped early (line search or QP failure); best iterate is returned
    STALLED = "stalled"


@dataclass(frozen=True, eq=False)
class PlannerConfig:
    N: int = 20
    dt: float = 0.2
    Q: np.ndarray = field(default_factory=lambda: np.diag([0.0, 2.0, 0.5, 0.1]))
    R: np.ndarray = field(default_factory=lambda: np.diag([0.1, 1.0]))
    S: np.ndarray | None = None
    p_th: float = 0.15
    v_ref: float = 30.0
    y_bounds: tuple[float, float] = (1.0, 6.0)
    delta_bounds: tuple[float, float] = (-math.radians(3.0), math.radians(3.0))
    a_bounds: tuple[float, float] = (-5.0, 5.0)
    slack_weight: float = 1e5
    solver_tol: float = 1e-6
    max_iters: int = 100
    # environment discretization
    road_width: float = 7.0
    cx: float = 0.5
    cy: float = 0.25
    detection_range: float = 40.0
    grid_behind: float = 10.0
    tv_length: float = 6.0
    tv_width: float = 2.0
    # "mass": per-cell probability; "density": density at cell centers
    cell_values: str = "mass"

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("horizon N must be at least 1")
        if self.S is None:
            object.__setattr__(self, "S", np.array(self.Q, dtype=float))
        for name in ("Q", "S"):
            m = np.asarray(getattr(self, name), dtype=float)
            if m.shape != (4, 4) or np.linalg.eigvalsh(0.5 * (m + m.T)).min() < -1e-12:
                raise ValueError(f"{name} must be a 4x4 positive semidefinite matrix")
        r = np.asarray(self.R, dtype=float)
        if r.shape != (2, 2) or np.linalg.eigvalsh(0.5 * (r + r.T)).min() <= 0:
            raise ValueError("R must be a 2x2 positive definite matrix")
        for name in ("y_bounds", "delta_bounds", "a_bounds"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name}: lower bound must be below upper bound")
        if self.p_th <= 0:
            raise ValueError("p_th must be positive")
        if self.cell_values not in ("mass", "density"):
            raise ValueError(f"cell_values must be 'mass' or 'density', got {self.cell_values!r}")

    def with_(self, **changes) -> "PlannerConfig":
        return replace(self, **changes)


def itsc2020_config(**overrides) -> PlannerConfig:
    """Planner constants of the two-lane highway study."""
    return PlannerConfig(**overrides)


@dataclass(frozen=True)
class TrackedTv:
    """A surrounding vehicle as seen by the planner."""

    state: TvState
    model: TvModel
    hypotheses: tuple[ManeuverHypothesis, ...]


@dataclass(frozen=True)
class PhaseTimes:
    grid: float = 0.0
    hull: float = 0.0
    solve: float = 0.0

    @property
    def total(self) -> float:
        return self.grid + self.hull + self.solve


@dataclass(frozen=True, eq=False)
class PlanResult:
    inputs: np.ndarray  # (N, 2): delta_f, a
    predicted_states: np.ndarray  # (N + 1, 4)
    hulls: list[Polytope]
    cost: float
    slack_total: float
    solve_time: float
    status: SolveStatus
    iterations: int = 0
    fallback_steps: tuple[int, ...] = ()
    hull_vertices: list[HullVertices] = field(default_factory=list)
    timings: PhaseTimes = PhaseTimes()

    @property
    def first_input(self) -> EvInput:
        return EvInput(float(self.inputs[0, 0]), float(self.inputs[0, 1]))

    @property
    def fallback_hull_used(self) -> bool:
        return bool(self.fallback_steps)


def build_ev_reference(cfg: PlannerConfig, current: EvState, target_lane_center: float):
    """``(N + 1, 4)`` reference: hold the target lane at ``v_ref`` with zero heading."""
    ref = np.array([current.x, target_lane_center, 0.0, cfg.v_ref])
    return np.tile(ref, (cfg.N + 1, 1))


def shift_warm_start(prev: PlanResult | np.ndarray) -> np.ndarray:
    u = np.asarray(prev.inputs if isinstance(prev, PlanResult) else prev, dtype=float)
    return np.vstack([u[1:], u[-1:]])


def rollout(params: EvParams, init: np.ndarray, inputs: np.ndarray, dt: float) -> np.ndarray:
    xs = np.empty((len(inputs) + 1, 4))
    xs[0] = init
    for h, u in enumerate(inputs):
        xs[h + 1] = ev_model.step(params, xs[h], u, dt)
    return xs


class _Ocp:
    """Single-shooting transcription: states are eliminated by forward Euler
    rollout of the inputs, so the decision vector holds inputs (and, inside
    each QP subproblem, one slack per softened row).
    """

    def __init__(self, cfg, params, init, refs, hulls):
        self.cfg = cfg
        self.params = params
        self.init = np.asarray(init, dtype=float)
        self.refs = np.asarray(refs, dtype=float)
        self.N = cfg.N
        self.Q = np.asarray(cfg.Q, float)
        self.R = np.asarray(cfg.R, float)
        self.S = np.asarray(cfg.S, float)

        # softened rows per step h = 1..N: hull rows then the two y bounds
        rows_a, rows_b, rows_h = [], [], []
        ylo, yhi = cfg.y_bounds
        for h in range(1, self.N + 1):
            poly = hulls[h - 1]
            for a, b in zip(poly.a, poly.b):
                rows_a.append(a)
                rows_b.append(b)
                rows_h.append(h)
            rows_a += [np.array([0.0, -1.0, 0, 0]), np.array([0.0, 1.0, 0, 0])]
            rows_b += [-ylo, yhi]
            rows_h += [h, h]
        self.ca = np.array(rows_a, dtype=float).reshape(-1, 4)
        self.cb = np.array(rows_b, dtype=float)
        self.ch = np.array(rows_h, dtype=int)

    def simulate(self, u):
        """States and sensitivities ``d xi_h / d u`` of shape (N+1, 4, 2N)."""
        N, dt = self.N, self.cfg.dt
        xs = np.empty((N + 1, 4))
        sens = np.zeros((N + 1, 4, 2 * N))
        xs[0] = self.init
        for h in range(N):
            A, B = ev_model.step_jacobians(self.params, xs[h], u[h], dt)
            xs[h + 1] = ev_model.step(self.params, xs[h], u[h], dt)
            sens[h + 1] = A @ sens[h]
            sens[h + 1][:, 2 * h : 2 * h + 2] = B
        return xs, sens

    def tracking_cost(self, u, xs):
        d = xs - self.refs
        stage = np.einsum("hi,ij,hj->", d[:-1], self.Q, d[:-1])
        inp = np.einsum("hi,ij,hj->", u, self.R, u)
        return float(stage + inp + d[-1] @ self.S @ d[-1])

    def tracking_grad(self, u, xs, sens):
        d = xs - self.refs
        w = np.einsum("ij,hj->hi", self.Q + self.Q.T, d)
        w[-1] = (self.S + self.S.T) @ d[-1]
        w[0] = 0.0
        g = np.einsum("hi,hij->j", w, sens)
        return g + (u @ (self.R + self.R.T)).ravel()

    def gauss_newton_hessian(self, sens):
        q = np.broadcast_to(self.Q + self.Q.T, (self.N + 1, 4, 4)).copy()
        q[-1] = self.S + self.S.T
        q[0] = 0.0
        H = np.einsum("hij,hjk,hkl->il", sens.transpose(0, 2, 1), q, sens)
        r2 = self.R + self.R.T
        for h in range(self.N):
            H[2 * h : 2 * h + 2, 2 * h : 2 * h + 2] += r2
        return H

    def violations(self, xs):
        return np.einsum("ri,ri->r", self.ca, xs[self.ch]) - self.cb

    def merit(self, u):
        """Cost with slacks at their optimal values for fixed inputs."""
        xs, _ = self.simulate(u)
        slack = np.maximum(self.violations(xs), 0.0)
        val = self.tracking_cost(u, xs) + self.cfg.slack_weight * slack.sum()
        return val, xs, slack

    def merit_grad(self, u):
        xs, sens = self.simulate(u)
        g = self.tracking_grad(u, xs, sens)
        active = self.violations(xs) > 0
        if np.any(active):
            rows = np.einsum("ri,rij->rj", self.ca[active], sens[self.ch[active]])
            g = g + self.cfg.slack_weight * rows.sum(axis=0)
        return g


def _as_array(init) -> np.ndarray:
    return init.as_array() if isinstance(init, EvState) else np.asarray(init, float)


def objective(cfg, params, init, refs, hulls, inputs) -> float:
    """Penalized objective for fixed inputs, slacks at their minimal values."""
    return _Ocp(cfg, params, _as_array(init), refs, hulls).merit(np.asarray(inputs, float))[0]


def objective_gradient(cfg, params, init, refs, hulls, inputs) -> np.ndarray:
    """Gradient of :func:`objective` with respect to the flattened inputs."""
    ocp = _Ocp(cfg, params, _as_array(init), refs, hulls)
    return ocp.merit_grad(np.asarray(inputs, float))


def _solve_qp(P, q, G, h):
    from cvxopt import matrix, solvers

    sol = solvers.qp(
        matrix(P), matrix(q), matrix(G), matrix(h),
        options={"show_progress": False, "maxiters": 50},
    )
    if sol["x"] is None:
        return None
    return np.array(sol["x"]).ravel()


def solve_ocp(
    cfg: PlannerConfig,
    params: EvParams,
    init: EvState,
    refs: np.ndarray,
    hulls: list[Polytope],
    warm: np.ndarray | None = None,
) -> PlanResult:
    """Gauss-Newton SQP on the exact-penalty objective with a box trust region.

    Each subproblem linearizes the rollout, keeps the input boxes hard and the
    hull and lateral-bound rows soft. Steps are accepted on the ratio of
    actual to predicted merit decrease.
    """
    if len(hulls) != cfg.N:
        raise ValueError(f"expected {cfg.N} hulls, got {len(hulls)}")
    t0 = time.perf_counter()
    N = cfg.N
    ocp = _Ocp(cfg, params, _as_array(init), refs, hulls)
    lo = np.tile([cfg.delta_bounds[0], cfg.a_bounds[0]], N)
    hi = np.tile([cfg.delta_bounds[1], cfg.a_bounds[1]], N)
    # trust region and regularization act on inputs scaled to comparable ranges
    scale = 0.5 * (hi - lo)
    n_u = 2 * N
    m = len(ocp.cb)
    w = cfg.slack_weight

    u = np.zeros(n_u) if warm is None else np.asarray(warm, float).ravel().copy()
    u = np.clip(u, lo, hi)
    phi, xs, slack = ocp.merit(u.reshape(N, 2))
    if not math.isfinite(phi):
        raise NumericalError("objective is not finite at the initial guess")

    radius = 0.5
    status = SolveStatus.MAX_ITERS
    it = 0
    for it in range(1, cfg.max_iters + 1):
        uu = u.reshape(N, 2)
        xs, sens = ocp.simulate(uu)
        g = ocp.tracking_grad(uu, xs, sens) * scale
        H = ocp.gauss_newton_hessian(sens) * np.outer(scale, scale)
        viol = ocp.violations(xs)
        jac = np.einsum("ri,rij->rj", ocp.ca, sens[ocp.ch]) * scale

        lo_d = np.maximum((lo - u) / scale, -radius)
        hi_d = np.minimum((hi - u) / scale, radius)
        P = np.zeros((n_u + m, n_u + m))
        P[:n_u, :n_u] = H + 1e-8 * np.eye(n_u)
        P[n_u:, n_u:] = 1e-10 * np.eye(m)
        qv = np.concatenate([g, np.full(m, w)])
        eye_u = np.eye(n_u)
        G = np.block(
            [
                [jac, -np.eye(m)],
                [np.zeros((m, n_u)), -np.eye(m)],
                [eye_u, np.zeros((n_u, m))],
                [-eye_u, np.zeros((n_u, m))],
            ]
        )
        def subproblem(offset):
            hv = np.concatenate([-offset, np.zeros(m), hi_d, -lo_d])
            sol = _solve_qp(P, qv, G, hv)
            return None if sol is None else sol[:n_u]

        def model_merit(d):
            lin = np.maximum(viol + jac @ d, 0.0)
            return phi - w * slack.sum() + g @ d + 0.5 * d @ H @ d + w * lin.sum()

        d = subproblem(viol)
        if d is None:
            status = SolveStatus.STALLED
            break
        pred = phi - model_merit(d)
        if pred <= cfg.solver_tol * max(1.0, abs(phi)):
            status = SolveStatus.CONVERGED
            break
        trial = np.clip(u + d * scale, lo, hi)
        phi_new, xs_new, slack_new = ocp.merit(trial.reshape(N, 2))
        rho = (phi - phi_new) / pred if math.isfinite(phi_new) else -1.0
        if rho < 0.1 and math.isfinite(phi_new):
            # second-order correction: shift the linearized rows by the
            # curvature error observed at the trial point
            err = ocp.violations(xs_new) - viol - jac @ d
            dc = subproblem(viol + err)
            if dc is not None:
                trial_c = np.clip(u + dc * scale, lo, hi)
                phi_c, xs_c, slack_c = ocp.merit(trial_c.reshape(N, 2))
                rho_c = (phi - phi_c) / pred if math.isfinite(phi_c) else -1.0
                if rho_c > rho:
                    d, trial, rho = dc, trial_c, rho_c
                    phi_new, xs_new, slack_new = phi_c, xs_c, slack_c
        step = float(np.max(np.abs(d)))
        log.debug(
            "it %d phi %.8g pred %.3g rho %.3f step %.3g radius %.3g",
            it, phi, pred, rho, step, radius,
        )
        if rho < 0.1:
            radius = 0.25 * step
        else:
            u, phi, xs, slack = trial, phi_new, xs_new, slack_new
            if rho > 0.75 and step >= 0.99 * radius:
                radius = min(2.0 * radius, 2.0)
        if radius < 1e-9:
            status = SolveStatus.STALLED
            break

    if not math.isfinite(phi):
        raise NumericalError("objective is not finite at the returned point")
    return PlanResult(
        inputs=u.reshape(N, 2).copy(),
        predicted_states=xs,
        hulls=list(hulls),
        cost=float(phi),
        slack_total=float(slack.sum()),
        solve_time=time.perf_counter() - t0,
        status=status,
        iterations=it,
    )


# -- environment prediction --------------------------------------------------


def planning_grid(cfg: PlannerConfig, ev_xs: np.ndarray) -> GridSpec:
    """One grid per cycle covering every predicted EV position plus the detection range."""
    x0 = float(ev_xs[0])
    ahead = float(np.max(ev_xs)) - x0 + cfg.detection_range
    return road_grid(x0, cfg.road_width, ahead, cfg.grid_behind, cfg.cx, cfg.cy)


def tv_predictions(cfg: PlannerConfig, tvs: list[TrackedTv]):
    """Per TV: covariance sequence and per-hypothesis mean trajectories."""
    out = []
    for tv in tvs:
        sigmas = propagate_covariance(tv.model, cfg.N)
        means = [
            (hyp.probability, predict_tv_mean_array(tv.model, tv.state, hyp, cfg.N))
            for hyp in tv.hypotheses
        ]
        out.append((sigmas, means))
    return out


def snapped_mean(spec: GridSpec, x: float, y: float) -> tuple[float, float]:
    """Center of the cell holding ``(x, y)``; positions off the grid are kept as is.

    Predicted position spreads can be far narrower than a cell, so the density
    is centered on the TV's cell rather than its exact position.
    """
    i = math.floor((x - spec.origin_x) / spec.cx)
    j = math.floor((y - spec.origin_y) / spec.cy)
    if 0 <= i < spec.nx and 0 <= j < spec.ny:
        return cell_to_world(spec, (i, j))
    return (x, y)


def occupancy_at(cfg: PlannerConfig, spec: GridSpec, predictions, h: int) -> Pog:
    """Fused probabilistic grid for prediction step ``h``."""
    parts = []
    for sigmas, means in predictions:
        sig2 = position_block(sigmas[h])
        for weight, traj in means:
            if weight <= 0.0:
                continue
            mean = snapped_mean(spec, traj[h, 0], traj[h, 2])
            parts.append(
                (weight, build_tv_pog(spec, mean, sig2, cfg.tv_length, cfg.tv_width, cfg.cell_values))
            )
    return combine_pogs(parts) if parts else empty_pog(spec)


def occupancy_grids(cfg, ev: EvState, tvs, ev_xs=None):
    """Probabilistic grids for steps ``0..N`` on the cycle's planning grid."""
    if ev_xs is None:
        ev_xs = np.array([ev.x + ev.v * cfg.dt * h for h in range(cfg.N + 1)])
    spec = planning_grid(cfg, ev_xs)
    preds = tv_predictions(cfg, tvs)
    return spec, [occupancy_at(cfg, spec, preds, h) for h in range(cfg.N + 1)]


def range_column(cfg: PlannerConfig, spec: GridSpec, ev_x: float) -> int:
    i = math.floor((ev_x + cfg.detection_range - spec.origin_x) / spec.cx)
    return int(min(max(i, 0), spec.nx - 1))


def plan_step(
    cfg: PlannerConfig,
    params: EvParams,
    ev: EvState,
    tvs: list[TrackedTv],
    target_lane: float,
    warm: np.ndarray | None = None,
) -> PlanResult:
    """One planning cycle. The EV poses used to anchor each step's hull come
    from rolling out the warm-start inputs."""
    t0 = time.perf_counter()
    warm_u = np.zeros((cfg.N, 2)) if warm is None else np.asarray(warm, float)
    anchor = rollout(params, ev.as_array(), warm_u, cfg.dt)

    spec = planning_grid(cfg, anchor[:, 0])
    preds = tv_predictions(cfg, tvs)
    bogs: list[Bog] = [
        to_bog(occupancy_at(cfg, spec, preds, h), cfg.p_th) for h in range(1, cfg.N + 1)
    ]
    t1 = time.perf_counter()

    vertices: list[HullVertices] = []
    polys: list[Polytope] = []
    fallback: list[int] = []
    for h in range(1, cfg.N + 1):
        pose = EvState.from_array(anchor[h])
        try:
            hv = admissible_safe_space(
                bogs[h - 1], pose, params.length, params.width,
                range_column(cfg, spec, pose.x),
            )
            poly = vertices_to_halfspaces(hv)
        except (HullNotFoundError, ValueError) as exc:
            if h == 1:
                raise InfeasibleStartError(f"no admissible hull at the first step: {exc}") from exc
            fallback.append(h)
            hv, poly = vertices[-1], polys[-1]
        vertices.append(hv)
        polys.append(poly)
    t2 = time.perf_counter()

    refs = build_ev_reference(cfg, ev, target_lane)
    res = solve_ocp(cfg, params, ev, refs, polys, warm_u)
    t3 = time.perf_counter()
    return replace(
        res,
        fallback_steps=tuple(fallback),
        hull_vertices=vertices,
        timings=PhaseTimes(grid=t1 - t0, hull=t2 - t1, solve=t3 - t2),
    )
