"""Ego-vehicle kinematic bicycle model, continuous and forward-Euler."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EvParams:
    lr: float = 1.5
    lf: float = 1.5
    length: float = 6.0
    width: float = 2.0

    def __post_init__(self):
        if self.lr <= 0 or self.lf <= 0:
            raise ValueError("axle distances must be positive")
        if self.length < self.lr + self.lf:
            raise ValueError("vehicle length shorter than wheelbase")


@dataclass(frozen=True)
class EvState:
    x: float
    y: float
    psi: float
    v: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.v])

    @classmethod
    def from_array(cls, a) -> "EvState":
        return cls(float(a[0]), float(a[1]), float(a[2]), float(a[3]))


@dataclass(frozen=True)
class EvInput:
    delta_f: float
    a: float

    def as_array(self) -> np.ndarray:
        return np.array([self.delta_f, self.a])


def _check_steer(delta_f):
    if np.any(np.abs(delta_f) >= math.pi / 2):
        raise ValueError(f"steering angle {delta_f} at or beyond the tan singularity")


def derivatives(p: EvParams, s: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Array form of :func:`continuous_derivatives` for ``s=[x,y,psi,v]``, ``u=[delta_f,a]``."""
    _check_steer(u[0])
    alpha = math.atan(p.lr / (p.lr + p.lf) * math.tan(u[0]))
    v = s[3]
    return np.array(
        [
            v * math.cos(s[2] + alpha),
            v * math.sin(s[2] + alpha),
            v / p.lr * math.sin(alpha),
            u[1],
        ]
    )


def continuous_derivatives(p: EvParams, s: EvState, u: EvInput) -> EvState:
    return EvState.from_array(derivatives(p, s.as_array(), u.as_array()))


def step(p: EvParams, s: np.ndarray, u: np.ndarray, dt: float) -> np.ndarray:
    return s + dt * derivatives(p, s, u)


def discrete_step(p: EvParams, s: EvState, u: EvInput, dt: float) -> EvState:
    if dt < 0:
        raise ValueError("dt must be nonnegative")
    return EvState.from_array(step(p, s.as_array(), u.as_array(), dt))


def step_jacobians(p: EvParams, s: np.ndarray, u: np.ndarray, dt: float):
    """Jacobians ``(A, B)`` of the Euler step with respect to state and input."""
    ratio = p.lr / (p.lr + p.lf)
    t = math.tan(u[0])
    alpha = math.atan(ratio * t)
    # d alpha / d delta_f
    dalpha = ratio * (1 + t * t) / (1 + (ratio * t) ** 2)
    psi, v = s[2], s[3]
    c = math.cos(psi + alpha)
    sn = math.sin(psi + alpha)

    A = np.eye(4)
    A[0, 2] = -dt * v * sn
    A[0, 3] = dt * c
    A[1, 2] = dt * v * c
    A[1, 3] = dt * sn
    A[2, 3] = dt * math.sin(alpha) / p.lr

    B = np.zeros((4, 2))
    B[0, 0] = -dt * v * sn * dalpha
    B[1, 0] = dt * v * c * dalpha
    B[2, 0] = dt * v / p.lr * math.cos(alpha) * dalpha
    B[3, 1] = dt
    return A, B
