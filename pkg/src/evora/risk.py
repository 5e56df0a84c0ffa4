"""Discrete tail risk measures and the planner's risk-aware costs.

VaR/CVaR operate on atomic distributions (values, probabilities). Traction
PMFs use their bin centres as atoms. Conventions on atoms:

* ``left_var(a)``  = largest atom z with positive mass and P(Z < z) <= a
* ``right_var(a)`` = smallest atom z with positive mass and P(Z > z) <= a
* CVaR averages the worst ``a`` of probability mass, splitting the boundary
  atom fractionally, so it is continuous in ``a`` and equals the mean at 1.

Comparisons against ``a`` allow a 1e-12 slack for cumulative-sum rounding.
"""

from __future__ import annotations

import math
import weakref
from dataclasses import dataclass, replace

import numpy as np

from evora.dynamics import DynamicsConfig, TractionGrid, batch_rollout_costs, rollout
from evora.evidential import bin_centers, uniform_edges
from evora.terrain import PlanningMap

ATOM_TOL = 1e-12
RISK_MODES = ("nominal", "expected", "cvar_dyn", "cvar_cost")


@dataclass(frozen=True)
class GoalSpec:
    center: tuple[float, float]
    radius: float = 1.0
    s_default: float = 3.0

    def __post_init__(self):
        if self.radius <= 0 or self.s_default <= 0:
            raise ValueError("goal radius and default speed must be positive")

    def reached(self, x) -> bool:
        return math.hypot(x[0] - self.center[0], x[1] - self.center[1]) <= self.radius


@dataclass(frozen=True)
class RiskConfig:
    mode: str = "cvar_dyn"
    alpha: float = 1.0
    n_maps: int = 1024

    def __post_init__(self):
        if self.mode not in RISK_MODES:
            raise ValueError(f"unknown risk mode {self.mode!r}")
        if not 0 < self.alpha <= 1:
            raise ValueError("alpha must lie in (0, 1]")
        if self.mode == "cvar_cost" and self.n_maps < 1:
            raise ValueError("need at least one sampled map")


def _check(values, probs, alpha):
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if values.shape != probs.shape:
        raise ValueError("values and probabilities disagree in shape")
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    return values, probs


def left_var(values, probs, alpha: float) -> float:
    values, probs = _check(values, probs, alpha)
    order = np.argsort(values, kind="stable")
    v, p = values[order], probs[order]
    below = np.cumsum(p) - p  # P(Z < v_i) for sorted distinct atoms
    ok = (p > 0) & (below <= alpha + ATOM_TOL)
    return float(v[ok].max())


def right_var(values, probs, alpha: float) -> float:
    values, probs = _check(values, probs, alpha)
    order = np.argsort(values, kind="stable")
    v, p = values[order], probs[order]
    above = p.sum() - np.cumsum(p)  # P(Z > v_i)
    ok = (p > 0) & (above <= alpha + ATOM_TOL)
    return float(v[ok].min())


def _tail_mean(values, probs, alpha):
    """Mean of the first ``alpha`` of mass along the last axis (already tail-ordered)."""
    before = np.cumsum(probs, axis=-1) - probs
    take = np.clip(alpha - before, 0.0, probs)
    return (take * values).sum(axis=-1) / alpha


def left_cvar(values, probs, alpha: float):
    """Expected value of the lowest ``alpha`` of mass. Accepts batched ``probs`` (..., n)."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    order = np.argsort(values, kind="stable")
    out = _tail_mean(values[order], probs[..., order], alpha)
    return float(out) if np.ndim(out) == 0 else out


def right_cvar(values, probs, alpha: float):
    """Expected value of the highest ``alpha`` of mass. Accepts batched ``probs`` (..., n)."""
    values = np.asarray(values, dtype=float)
    probs = np.asarray(probs, dtype=float)
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    order = np.argsort(-values, kind="stable")
    out = _tail_mean(values[order], probs[..., order], alpha)
    return float(out) if np.ndim(out) == 0 else out


def pmf_left_cvar(pmf, alpha: float):
    p = np.asarray(pmf, dtype=float)
    return left_cvar(bin_centers(uniform_edges(p.shape[-1])), p, alpha)


def objective_cost(states, goal: GoalSpec, dt: float) -> float:
    """Time spent before the first goal entry plus the remaining distance over ``s_default``."""
    states = np.asarray(states, dtype=float)
    in_goal = np.hypot(states[:, 0] - goal.center[0], states[:, 1] - goal.center[1]) <= goal.radius
    done = np.logical_or.accumulate(in_goal)
    horizon = len(states) - 1
    cost = dt * float(np.sum(~done[:horizon]))
    if not done[-1]:
        cost += math.hypot(states[-1, 0] - goal.center[0], states[-1, 1] - goal.center[1]) / goal.s_default
    return cost


_WORST_CASE_CACHE: "weakref.WeakKeyDictionary[PlanningMap, dict]" = weakref.WeakKeyDictionary()


def worst_case_traction_map(pm: PlanningMap, alpha: float):
    """Per-cell left-tail CVaR of linear and angular traction, cached per (map, alpha)."""
    per_map = _WORST_CASE_CACHE.setdefault(pm, {})
    if alpha not in per_map:
        per_map[alpha] = (pmf_left_cvar(pm.post_lin, alpha), pmf_left_cvar(pm.post_ang, alpha))
    return per_map[alpha]


def planning_traction(pm: PlanningMap, risk: RiskConfig):
    """Deterministic traction grids used by the single-rollout modes."""
    if risk.mode == "nominal":
        ones = np.ones(pm.shape)
        return ones, ones
    if risk.mode == "expected":
        return worst_case_traction_map(pm, 1.0)
    if risk.mode == "cvar_dyn":
        return worst_case_traction_map(pm, risk.alpha)
    raise ValueError("cvar_cost has no deterministic traction grid")


def _aux_along(states, pm: PlanningMap, goal: GoalSpec):
    """Penalty of every stage state x_0..x_{T-1} visited before the goal."""
    total = 0.0
    grid = TractionGrid(pm.aux_penalty, pm.aux_penalty, pm.resolution)
    for x in states[:-1]:
        if goal.reached(x):
            break
        cell = grid.cell(x[0], x[1])
        if cell is not None:
            total += float(pm.aux_penalty[cell])
    return total


def _single_cost(x0, controls, psi_lin, psi_ang, pm, goal, cfg):
    states = rollout(x0, controls, TractionGrid(psi_lin, psi_ang, pm.resolution), cfg)
    return objective_cost(states, goal, cfg.dt) + _aux_along(states, pm, goal)


def cvar_dyn_cost(x0, controls, pm: PlanningMap, goal: GoalSpec, alpha: float, cfg: DynamicsConfig = DynamicsConfig()) -> float:
    """Objective of one rollout on the worst-case expected traction map, plus penalties."""
    psi_lin, psi_ang = worst_case_traction_map(pm, alpha)
    return _single_cost(x0, controls, psi_lin, psi_ang, pm, goal, cfg)


def nominal_cost(x0, controls, pm: PlanningMap, goal: GoalSpec, cfg: DynamicsConfig = DynamicsConfig()) -> float:
    ones = np.ones(pm.shape)
    return _single_cost(x0, controls, ones, ones, pm, goal, cfg)


def sample_traction_maps(pm: PlanningMap, n_maps: int, rng: np.random.Generator):
    """``n_maps`` traction maps, each cell drawing bin-centre values from its posterior PMFs."""
    centres = bin_centers(uniform_edges(pm.n_bins))
    out = []
    for post in (pm.post_lin, pm.post_ang):
        cdf = np.cumsum(post, axis=-1)
        cdf[..., -1] = 1.0
        u = rng.random((n_maps,) + pm.shape)
        idx = np.empty(u.shape, dtype=np.int64)
        for m in range(n_maps):
            idx[m] = (cdf < u[m][..., None]).sum(axis=-1)
        out.append(centres[np.minimum(idx, pm.n_bins - 1)])
    return out[0], out[1]


def cvar_cost_cost(x0, controls, pm: PlanningMap, goal: GoalSpec, alpha: float, n_maps: int, seed: int,
                   cfg: DynamicsConfig = DynamicsConfig(), maps=None) -> float:
    """Right-tail CVaR of the objective over sampled traction maps."""
    if n_maps < 1:
        raise ValueError("need at least one sampled map")
    if maps is None:
        maps = sample_traction_maps(pm, n_maps, np.random.default_rng(seed))
    costs = np.array([_single_cost(x0, controls, maps[0][m], maps[1][m], pm, goal, cfg) for m in range(len(maps[0]))])
    return right_cvar(costs, np.full(len(costs), 1.0 / len(costs)), alpha)


def batch_costs(x0, controls, pm: PlanningMap, goal: GoalSpec, risk: RiskConfig, cfg: DynamicsConfig, maps=None):
    """Risk cost of ``K`` candidate sequences ``(K, T, 2)`` through the compiled rollout kernel."""
    if risk.mode == "cvar_cost":
        if maps is None:
            raise ValueError("cvar_cost needs sampled traction maps")
        costs = batch_rollout_costs(x0, controls, maps[0], maps[1], pm.aux_penalty, pm.resolution, goal, cfg)
        m = costs.shape[1]
        return right_cvar_rows(costs, risk.alpha) if m > 1 else costs[:, 0]
    psi_lin, psi_ang = planning_traction(pm, risk)
    return batch_rollout_costs(x0, controls, psi_lin, psi_ang, pm.aux_penalty, pm.resolution, goal, cfg)[:, 0]


def right_cvar_rows(samples, alpha: float) -> np.ndarray:
    """Right-tail CVaR of each row of equally weighted samples."""
    samples = np.sort(np.asarray(samples, dtype=float), axis=1)[:, ::-1]
    n = samples.shape[1]
    probs = np.full(n, 1.0 / n)
    before = np.cumsum(probs) - probs
    take = np.clip(alpha - before, 0.0, probs)
    return samples @ take / alpha


# -- auxiliary penalty rules --------------------------------------------------


@dataclass(frozen=True)
class OodZeroTraction:
    g_thres: float


@dataclass(frozen=True)
class OodPenalty:
    g_thres: float
    weight: float


@dataclass(frozen=True)
class SemanticPenalty:
    semantic: int
    weight: float


@dataclass(frozen=True)
class ElevationPenalty:
    h_max: float
    weight: float


def apply_aux_penalties(pm: PlanningMap, rule) -> PlanningMap:
    """New planning map with the rule applied; the input map is left untouched."""
    if isinstance(rule, OodZeroTraction):
        mask = pm.confidence < rule.g_thres
        point = np.zeros(pm.n_bins)
        point[0] = 1.0
        post_lin = np.where(mask[..., None], point, pm.post_lin)
        post_ang = np.where(mask[..., None], point, pm.post_ang)
        return replace(pm, post_lin=post_lin, post_ang=post_ang)
    if isinstance(rule, OodPenalty):
        mask = pm.confidence < rule.g_thres
    elif isinstance(rule, SemanticPenalty):
        if pm.semantic is None:
            raise ValueError("planning map carries no semantic layer")
        mask = pm.semantic == rule.semantic
    elif isinstance(rule, ElevationPenalty):
        if pm.elevation is None:
            raise ValueError("planning map carries no elevation layer")
        mask = pm.elevation > rule.h_max
    else:
        raise ValueError(f"unknown penalty rule {rule!r}")
    if rule.weight < 0:
        raise ValueError("penalty weight must be non-negative")
    return replace(pm, aux_penalty=pm.aux_penalty + np.where(mask, rule.weight, 0.0))
