"""Target-vehicle prediction: linear point-mass model under a feedback law.

State ordering is ``[x, vx, y, vy]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class ManeuverKind(str, enum.Enum):
    LANE_KEEP = "LK"
    LANE_CHANGE = "LC"


@dataclass(frozen=True)
class ManeuverHypothesis:
    kind: ManeuverKind
    probability: float
    target_lane_center: float
    cruise_speed: float

    def __post_init__(self):
        if not 0.0 <= self.probability <= 1.0:
            raise ValueError(f"maneuver probability {self.probability} outside [0, 1]")


def check_hypotheses(hyps) -> None:
    total = sum(h.probability for h in hyps)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"maneuver probabilities sum to {total}, expected 1")


def most_likely(hyps):
    # first one wins on ties, keeps the choice deterministic
    return max(hyps, key=lambda h: h.probability)


@dataclass(frozen=True, eq=False)
class TvModel:
    A: np.ndarray
    B: np.ndarray
    G: np.ndarray
    K: np.ndarray
    sigma_w: np.ndarray
    dt: float

    @classmethod
    def point_mass(
        cls,
        dt: float,
        gains=(-1.0, -0.8, -2.2),
        g_diag=(0.05, 0.067, 0.013, 0.03),
        sigma_w=None,
    ) -> "TvModel":
        """Discrete point-mass model with gains ``(k12, k21, k22)``."""
        A = np.array(
            [[1, dt, 0, 0], [0, 1, 0, 0], [0, 0, 1, dt], [0, 0, 0, 1]], dtype=float
        )
        B = np.array(
            [[0.5 * dt**2, 0], [dt, 0], [0, 0.5 * dt**2], [0, dt]], dtype=float
        )
        k12, k21, k22 = gains
        K = np.array([[0, k12, 0, 0], [0, 0, k21, k22]], dtype=float)
        sw = np.eye(4) if sigma_w is None else np.asarray(sigma_w, dtype=float)
        return cls(A, B, np.diag(g_diag).astype(float), K, sw, dt)

    @property
    def closed_loop(self) -> np.ndarray:
        return self.A + self.B @ self.K


def itsc2020_tv_model() -> TvModel:
    return TvModel.point_mass(0.2)


@dataclass(frozen=True)
class TvState:
    x: float
    vx: float
    y: float
    vy: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.vx, self.y, self.vy])

    @classmethod
    def from_array(cls, a) -> "TvState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


def _reference(state: np.ndarray, hyp: ManeuverHypothesis) -> np.ndarray:
    # the x column of K is zero, so the x reference is irrelevant; use the current x
    return np.array([state[0], hyp.cruise_speed, hyp.target_lane_center, 0.0])


def _feedback(m: TvModel, state: np.ndarray, ref: np.ndarray) -> np.ndarray:
    return m.K @ (state - ref)


def tv_feedback(m: TvModel, state: TvState, ref: TvState) -> tuple[float, float]:
    u = _feedback(m, state.as_array(), ref.as_array())
    return float(u[0]), float(u[1])


def _mean_step(m: TvModel, s: np.ndarray, hyp: ManeuverHypothesis) -> np.ndarray:
    return m.A @ s + m.B @ _feedback(m, s, _reference(s, hyp))


def predict_tv_mean(
    m: TvModel, init: TvState, hyp: ManeuverHypothesis, n: int
) -> list[TvState]:
    """Noise-free rollout of ``n`` steps; returns ``n + 1`` states starting at ``init``."""
    if n < 0:
        raise ValueError("horizon must be nonnegative")
    s = init.as_array()
    out = [init]
    for _ in range(n):
        s = _mean_step(m, s, hyp)
        out.append(TvState.from_array(s))
    return out


def predict_tv_mean_array(m: TvModel, init: TvState, hyp: ManeuverHypothesis, n: int):
    return np.array([s.as_array() for s in predict_tv_mean(m, init, hyp, n)])


def propagate_covariance(m: TvModel, n: int) -> list[np.ndarray]:
    """Prediction covariances for steps ``0..n``, starting from zero."""
    if n < 0:
        raise ValueError("horizon must be nonnegative")
    phi = m.closed_loop
    q = m.G @ m.sigma_w @ m.G.T
    sig = np.zeros((4, 4))
    out = [sig]
    for _ in range(n):
        sig = phi @ sig @ phi.T + q
        sig = 0.5 * (sig + sig.T)
        out.append(sig)
    return out


def tv_truth_step(
    m: TvModel,
    state: TvState,
    hyp: ManeuverHypothesis,
    noise_on: bool = False,
    rng_seed: int = 0,
) -> TvState:
    """Advance the simulated TV one step along ``hyp``, optionally with sampled disturbance."""
    s = _mean_step(m, state.as_array(), hyp)
    if noise_on:
        rng = np.random.default_rng(rng_seed)
        w = rng.multivariate_normal(np.zeros(4), m.sigma_w, method="cholesky")
        s = s + m.G @ w
    return TvState.from_array(s)
