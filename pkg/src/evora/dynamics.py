"""Traction-scaled unicycle and bicycle kinematics.

State is ``(px, py, theta)``. Linear traction scales the forward speed and
angular traction scales the yaw rate; both integrate with one explicit Euler
step of length ``dt``. Heading is wrapped to (-pi, pi] after every step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

UNICYCLE, BICYCLE = 0, 1
MODEL_KINDS = {"unicycle": UNICYCLE, "bicycle": BICYCLE}


@dataclass(frozen=True)
class DynamicsConfig:
    kind: str = "unicycle"
    dt: float = 0.1
    wheelbase: float = 0.33
    v_max: float = 3.0
    omega_max: float = math.pi
    delta_max: float = math.pi / 4

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown vehicle model {self.kind!r}")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.kind == "bicycle" and self.wheelbase <= 0:
            raise ValueError("wheelbase must be positive")
        if self.kind == "bicycle" and not 0 < self.delta_max < math.pi / 2:
            raise ValueError("steering limit must lie in (0, pi/2)")
        if self.v_max <= 0 or self.omega_max <= 0:
            raise ValueError("control limits must be positive")

    @property
    def code(self) -> int:
        return MODEL_KINDS[self.kind]

    @property
    def turn_limit(self) -> float:
        return self.omega_max if self.kind == "unicycle" else self.delta_max

    @property
    def limits(self) -> np.ndarray:
        return np.array([self.v_max, self.turn_limit])


def wrap_angle(theta):
    """Wrap to (-pi, pi]."""
    out = np.asarray(theta, dtype=float)
    out = out - 2 * np.pi * np.ceil((out - np.pi) / (2 * np.pi))
    return float(out) if out.ndim == 0 else out


def clamp_controls(u, cfg: DynamicsConfig) -> np.ndarray:
    lim = cfg.limits
    return np.clip(np.asarray(u, dtype=float), -lim, lim)


def unicycle_step(x, u, psi, cfg: DynamicsConfig) -> np.ndarray:
    px, py, th = x
    v, omega = u
    psi_lin, psi_ang = psi
    return np.array([
        px + cfg.dt * psi_lin * v * math.cos(th),
        py + cfg.dt * psi_lin * v * math.sin(th),
        wrap_angle(th + cfg.dt * psi_ang * omega),
    ])


def bicycle_step(x, u, psi, cfg: DynamicsConfig) -> np.ndarray:
    px, py, th = x
    v, delta = u
    psi_lin, psi_ang = psi
    return np.array([
        px + cfg.dt * psi_lin * v * math.cos(th),
        py + cfg.dt * psi_lin * v * math.sin(th),
        wrap_angle(th + cfg.dt * psi_ang * v * math.tan(delta) / cfg.wheelbase),
    ])


def step(x, u, psi, cfg: DynamicsConfig) -> np.ndarray:
    return (unicycle_step if cfg.kind == "unicycle" else bicycle_step)(x, u, psi, cfg)


@dataclass(frozen=True, eq=False)
class TractionGrid:
    """Per-cell (linear, angular) traction values; zero outside the grid."""

    psi_lin: np.ndarray
    psi_ang: np.ndarray
    resolution: float

    def cell(self, px: float, py: float):
        col = math.floor(px / self.resolution)
        row = math.floor(py / self.resolution)
        rows, cols = self.psi_lin.shape
        if 0 <= row < rows and 0 <= col < cols:
            return row, col
        return None

    def __call__(self, x):
        cell = self.cell(x[0], x[1])
        if cell is None:
            return 0.0, 0.0
        return float(self.psi_lin[cell]), float(self.psi_ang[cell])


def rollout(x0, controls, traction_fn, cfg: DynamicsConfig) -> np.ndarray:
    """States ``x_0 .. x_T``; traction is read at ``x_t`` before each step."""
    states = [np.asarray(x0, dtype=float)]
    for u in np.asarray(controls, dtype=float).reshape(-1, 2):
        states.append(step(states[-1], u, traction_fn(states[-1]), cfg))
    return np.array(states)


# -- batched kernel ---------------------------------------------------------
# One fused loop for the planner: simulate every candidate on every traction map
# and accumulate the minimum-time objective plus per-step penalties.


@numba.njit(cache=True)
def _wrap(theta):
    return theta - 2.0 * math.pi * math.ceil((theta - math.pi) / (2.0 * math.pi))


@numba.njit(cache=True)
def _rollout_costs(x0, controls, psi_lin, psi_ang, aux, res, goal, s_default, dt, kind, wheelbase):
    n_cand, horizon = controls.shape[0], controls.shape[1]
    n_maps, rows, cols = psi_lin.shape
    r2 = goal[2] * goal[2]
    out = np.empty((n_cand, n_maps))
    for k in range(n_cand):
        for m in range(n_maps):
            px, py, th = x0[0], x0[1], x0[2]
            cost = 0.0
            done = (px - goal[0]) ** 2 + (py - goal[1]) ** 2 <= r2
            for t in range(horizon):
                if done:
                    break
                col = math.floor(px / res)
                row = math.floor(py / res)
                if 0 <= row < rows and 0 <= col < cols:
                    p1 = psi_lin[m, row, col]
                    p2 = psi_ang[m, row, col]
                    cost += dt + aux[row, col]
                else:
                    p1 = 0.0
                    p2 = 0.0
                    cost += dt
                v = controls[k, t, 0]
                turn = controls[k, t, 1]
                c, s = math.cos(th), math.sin(th)
                px += dt * p1 * v * c
                py += dt * p1 * v * s
                if kind == 0:
                    th = _wrap(th + dt * p2 * turn)
                else:
                    th = _wrap(th + dt * p2 * v * math.tan(turn) / wheelbase)
                done = (px - goal[0]) ** 2 + (py - goal[1]) ** 2 <= r2
            if not done:
                cost += math.sqrt((px - goal[0]) ** 2 + (py - goal[1]) ** 2) / s_default
            out[k, m] = cost
    return out


def batch_rollout_costs(x0, controls, psi_lin, psi_ang, aux, resolution, goal, cfg: DynamicsConfig):
    """Minimum-time cost of every candidate on every traction map.

    ``controls`` is ``(K, T, 2)``; ``psi_lin``/``psi_ang`` are ``(M, rows, cols)``
    (or ``(rows, cols)`` for one map); ``aux`` is ``(rows, cols)``; ``goal`` has
    ``center``, ``radius`` and ``s_default``. Returns ``(K, M)``.
    """
    psi_lin = np.asarray(psi_lin, dtype=float)
    psi_ang = np.asarray(psi_ang, dtype=float)
    if psi_lin.ndim == 2:
        psi_lin, psi_ang = psi_lin[None], psi_ang[None]
    controls = np.ascontiguousarray(np.asarray(controls, dtype=float).reshape(-1, np.shape(controls)[-2], 2))
    g = np.array([goal.center[0], goal.center[1], goal.radius])
    return _rollout_costs(
        np.asarray(x0, dtype=float), controls, np.ascontiguousarray(psi_lin), np.ascontiguousarray(psi_ang),
        np.ascontiguousarray(np.asarray(aux, dtype=float)), float(resolution), g, float(goal.s_default),
        float(cfg.dt), cfg.code, float(cfg.wheelbase),
    )
