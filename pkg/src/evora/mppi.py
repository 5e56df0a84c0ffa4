"""Receding-horizon MPPI over the risk-aware costs, and a closed-loop episode runner."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from evora.dynamics import DynamicsConfig, TractionGrid, clamp_controls, step
from evora.evidential import uniform_edges
from evora.risk import GoalSpec, RiskConfig, batch_costs, sample_traction_maps
from evora.terrain import PlanningMap, TerrainMap


@dataclass(frozen=True)
class MppiConfig:
    horizon: int = 100
    n_rollouts: int = 1024
    noise_std: tuple[float, float] = (2.0, 2.0)
    temperature: float = 0.3
    dynamics: DynamicsConfig = field(default_factory=DynamicsConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)

    def __post_init__(self):
        if self.horizon < 1 or self.n_rollouts < 1:
            raise ValueError("horizon and rollout count must be at least 1")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if len(self.noise_std) != 2 or min(self.noise_std) <= 0:
            raise ValueError("noise std must be two positive values")

    @property
    def dt(self) -> float:
        return self.dynamics.dt


@dataclass(frozen=True)
class PlanDiagnostics:
    min_cost: float
    mean_cost: float
    ess: float


def shift_sequence(u) -> np.ndarray:
    """Drop the first control and repeat the last."""
    u = np.asarray(u, dtype=float)
    return np.concatenate([u[1:], u[-1:]], axis=0)


def mppi_weights(costs, temperature: float) -> np.ndarray:
    costs = np.asarray(costs, dtype=float)
    w = np.exp(-(costs - costs.min()) / temperature)
    return w / w.sum()


def plan_step(x0, nominal, pm: PlanningMap, goal: GoalSpec, cfg: MppiConfig, rng: np.random.Generator, maps=None):
    """One MPPI update of ``nominal`` ``(T, 2)``; returns ``(new_nominal, diagnostics)``."""
    nominal = np.asarray(nominal, dtype=float)
    noise = rng.standard_normal((cfg.n_rollouts,) + nominal.shape) * np.asarray(cfg.noise_std)
    candidates = clamp_controls(nominal[None] + noise, cfg.dynamics)
    if cfg.risk.mode == "cvar_cost" and maps is None:
        maps = sample_traction_maps(pm, cfg.risk.n_maps, rng)
    costs = batch_costs(x0, candidates, pm, goal, cfg.risk, cfg.dynamics, maps)
    w = mppi_weights(costs, cfg.temperature)
    # fixed reduction order over candidates: deterministic and index-ordered
    update = np.tensordot(w, noise, axes=(0, 0))
    out = clamp_controls(nominal + update, cfg.dynamics)
    return out, PlanDiagnostics(float(costs.min()), float(costs.mean()), float(1.0 / np.sum(w * w)))


@dataclass(frozen=True, eq=False)
class EpisodeResult:
    success: bool
    time_to_goal: float | None
    trajectory: np.ndarray
    steps: int
    diagnostics: list = field(default_factory=list)


def sample_world_traction(world: TerrainMap, rng: np.random.Generator):
    """One fixed traction realisation: per cell, a value drawn uniformly inside a bin drawn from the GT PMF."""
    edges = uniform_edges(world.n_bins)
    out = []
    for gt in (world.gt_lin, world.gt_ang):
        cdf = np.cumsum(gt, axis=-1)
        cdf[..., -1] = 1.0
        u = rng.random(world.shape)
        idx = np.minimum((cdf < u[..., None]).sum(axis=-1), world.n_bins - 1)
        out.append(edges[idx] + (edges[idx + 1] - edges[idx]) * rng.random(world.shape))
    return out[0], out[1]


def run_closed_loop(world: TerrainMap, pm: PlanningMap, goal: GoalSpec, cfg: MppiConfig, start, time_limit: float,
                    seed: int, per_step_traction: bool = False, record: bool = False, world_traction=None) -> EpisodeResult:
    """Alternate planning and executing the first control until goal entry or the time limit.

    The executed motion uses the true traction of the world; by default one
    realisation is drawn per episode and held fixed, ``per_step_traction``
    redraws the current cell's value at every step. ``world_traction`` overrides
    the fixed realisation.
    """
    rng_world = np.random.default_rng([seed, 1])
    rng_plan = np.random.default_rng([seed, 2])
    x = np.asarray(start, dtype=float)
    traj = [x]
    if goal.reached(x):
        return EpisodeResult(True, 0.0, np.array(traj), 0)
    if world_traction is None and not per_step_traction:
        world_traction = sample_world_traction(world, rng_world)
    fixed = None if world_traction is None else TractionGrid(world_traction[0], world_traction[1], world.resolution)
    edges = uniform_edges(world.n_bins)

    nominal = np.zeros((cfg.horizon, 2))
    max_steps = int(round(time_limit / cfg.dt))
    diags = []
    maps = None
    for k in range(max_steps):
        if cfg.risk.mode == "cvar_cost":
            maps = sample_traction_maps(pm, cfg.risk.n_maps, rng_plan)
        nominal, diag = plan_step(x, nominal, pm, goal, cfg, rng_plan, maps)
        if record:
            diags.append(diag)
        if fixed is not None:
            psi = fixed(x)
        else:
            cell = TractionGrid(world.gt_lin[..., 0], world.gt_lin[..., 0], world.resolution).cell(x[0], x[1])
            if cell is None:
                psi = (0.0, 0.0)
            else:
                psi = tuple(
                    float(_draw_in_bin(gt[cell], edges, rng_world)) for gt in (world.gt_lin, world.gt_ang)
                )
        x = step(x, nominal[0], psi, cfg.dynamics)
        traj.append(x)
        nominal = shift_sequence(nominal)
        if goal.reached(x):
            return EpisodeResult(True, (k + 1) * cfg.dt, np.array(traj), k + 1, diags)
    return EpisodeResult(False, None, np.array(traj), max_steps, diags)


def _draw_in_bin(pmf, edges, rng):
    cdf = np.cumsum(pmf)
    idx = min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(pmf) - 1)
    return edges[idx] + (edges[idx + 1] - edges[idx]) * rng.random()


def straight_line_time(start, goal: GoalSpec, v_max: float) -> float:
    return max(0.0, math.hypot(goal.center[0] - start[0], goal.center[1] - start[1]) - goal.radius) / v_max
