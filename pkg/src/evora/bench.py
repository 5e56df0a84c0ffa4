"""Seeded experiment harness: planner benchmark, penalty trade-off, OOD avoidance, loss-vs-navigation.

Every trial is keyed by ``(experiment, cell_id, map_index, realization, repeat)``
and its seeds are derived from the master seed with a blake2b counter hash, so
adding maps or realizations never reshuffles existing trials. Results are a
summary CSV, raw per-trial JSONL and a long-format CSV for plotting.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np

from evora.dynamics import DynamicsConfig
from evora.model import EvidentialModel, TrainConfig, train
from evora.mppi import MppiConfig, run_closed_loop, sample_world_traction
from evora.risk import (
    GoalSpec,
    OodPenalty,
    OodZeroTraction,
    RiskConfig,
    SemanticPenalty,
    apply_aux_penalties,
)
from evora.terrain import (
    DIRT,
    KINDS,
    VEGETATION,
    PlanningMap,
    TerrainMap,
    binned_normal_pmf,
    collect_training_data,
    gen_dataset,
    gen_terrain,
    gt_planning_map,
    gt_traction_dist,
    predict_map,
    TerrainConfig,
)

RESULTS_SCHEMA_VERSION = 1
EXPERIMENTS = ("planner", "penalty", "ood", "loss_nav")
LOSS_WEIGHTS = {"uce": (1.0, 0.0), "uemd2": (0.0, 1.0), "hybrid": (1.0, 1.0)}


def derive_seed(master: int, *key) -> int:
    """Stable 63-bit seed for ``key`` under ``master``."""
    text = ":".join(str(k) for k in (master,) + tuple(key))
    return int.from_bytes(hashlib.blake2b(text.encode(), digest_size=8).digest(), "little") >> 1


# -- arenas -----------------------------------------------------------------


@dataclass(frozen=True)
class ArenaSpec:
    """Rectangular arena; vegetation probability falls linearly with distance from the centre."""

    width: float = 20.0
    height: float = 12.0
    resolution: float = 0.5
    start: tuple[float, float, float] = (2.0, 6.0, 0.0)
    goal: tuple[float, float] = (18.0, 6.0)
    goal_radius: float = 1.0
    veg_density: float = 0.7
    patch_size: float = 1.0
    ramp_radius: float = 6.0
    clear_radius: float = 1.5
    high_traction: float = 0.9
    low_traction: float = 0.1
    low_weight: float = 0.5
    n_bins: int = 20

    def __post_init__(self):
        if not 0 <= self.veg_density <= 1:
            raise ValueError("vegetation density must lie in [0, 1]")
        if not 0 <= self.low_weight <= 1:
            raise ValueError("low-mode weight must lie in [0, 1]")
        if min(self.width, self.height, self.resolution, self.patch_size, self.ramp_radius) <= 0:
            raise ValueError("arena dimensions must be positive")
        for x, y in (self.start[:2], self.goal):
            if not (0 <= x < self.width and 0 <= y < self.height):
                raise ValueError("start and goal must lie inside the arena")

    @property
    def shape(self) -> tuple[int, int]:
        return int(round(self.height / self.resolution)), int(round(self.width / self.resolution))

    @property
    def goal_spec(self) -> GoalSpec:
        return GoalSpec(self.goal, self.goal_radius)


def _cell_centres(rows, cols, res):
    ys = (np.arange(rows) + 0.5) * res
    xs = (np.arange(cols) + 0.5) * res
    return np.meshgrid(xs, ys)


def vegetation_probability(spec: ArenaSpec) -> np.ndarray:
    """Per-cell vegetation probability: ``density * max(0, 1 - r / ramp_radius)``."""
    x, y = _cell_centres(*spec.shape, spec.resolution)
    r = np.hypot(x - spec.width / 2, y - spec.height / 2)
    return spec.veg_density * np.clip(1.0 - r / spec.ramp_radius, 0.0, 1.0)


def _clear_mask(spec: ArenaSpec):
    x, y = _cell_centres(*spec.shape, spec.resolution)
    near = np.zeros(spec.shape, dtype=bool)
    for px, py in (spec.start[:2], spec.goal):
        near |= np.hypot(x - px, y - py) <= spec.clear_radius
    return near


def gen_arena(spec: ArenaSpec, seed: int) -> TerrainMap:
    """Dirt/vegetation arena with bimodal vegetation traction; start and goal surroundings are dirt."""
    rng = np.random.default_rng([seed, 21])
    rows, cols = spec.shape
    block = max(1, int(round(spec.patch_size / spec.resolution)))
    draw = rng.random((-(-rows // block), -(-cols // block)))
    draw = np.kron(draw, np.ones((block, block)))[:rows, :cols]
    semantic = np.where(draw < vegetation_probability(spec), VEGETATION, DIRT)
    semantic[_clear_mask(spec)] = DIRT

    train = KINDS["train"]
    elevation = np.where(semantic == VEGETATION, np.mean(train.veg_range), np.mean(train.dirt_range))
    dirt_pmf = binned_normal_pmf(spec.high_traction, spec.n_bins)
    veg_pmf = (1 - spec.low_weight) * dirt_pmf + spec.low_weight * binned_normal_pmf(spec.low_traction, spec.n_bins)
    gt = np.where((semantic == VEGETATION)[..., None], veg_pmf, dirt_pmf)
    meta = {"arena": asdict(spec), "vegetation_profile": "linear_radial"}
    return TerrainMap(semantic, elevation, np.zeros(spec.shape), gt, gt.copy(), np.zeros(spec.shape, dtype=bool),
                      spec.resolution, "arena", seed, meta)


@dataclass(frozen=True)
class PuddleSpec:
    """Near-immobilising dirt patches across the direct route.

    Their elevation sits just below the training dirt range, where a trained
    model still extrapolates dirt-like traction but with low latent density.
    """

    n_puddles: int = 3
    radius: tuple[float, float] = (1.5, 2.5)
    elevation: tuple[float, float] = (-0.45, -0.28)
    traction: float = 0.02
    corridor: float = 2.0


def gen_ood_arena(spec: ArenaSpec, puddles: PuddleSpec, seed: int) -> TerrainMap:
    """Arena whose in-range terrain matches the training kind plus out-of-range puddles.

    In-range cells draw elevation uniformly inside the training ranges and take
    their ground truth from the training recipe; puddle cells are dirt with
    elevation below the training range and traction near zero.
    """
    base = gen_arena(spec, seed)
    rng = np.random.default_rng([seed, 22])
    rows, cols = spec.shape
    train = KINDS["train"]
    semantic = base.semantic
    elevation = np.where(semantic == VEGETATION, rng.uniform(*train.veg_range, spec.shape),
                         rng.uniform(*train.dirt_range, spec.shape))
    gt = np.empty((rows, cols, spec.n_bins))
    for r in range(rows):
        for c in range(cols):
            gt[r, c] = gt_traction_dist(int(semantic[r, c]), float(elevation[r, c]), 0.0, train, spec.n_bins)[0]

    x, y = _cell_centres(rows, cols, spec.resolution)
    wet = np.zeros(spec.shape, dtype=bool)
    sx, sy = spec.start[:2]
    gx, gy = spec.goal
    for i in range(puddles.n_puddles):
        t = (i + 1) / (puddles.n_puddles + 1)
        cx = sx + t * (gx - sx)
        cy = sy + t * (gy - sy) + rng.uniform(-puddles.corridor, puddles.corridor)
        wet |= np.hypot(x - cx, y - cy) <= rng.uniform(*puddles.radius)
    wet &= ~_clear_mask(spec)
    semantic = np.where(wet, DIRT, semantic)
    elevation = np.where(wet, rng.uniform(*puddles.elevation, spec.shape), elevation)
    gt[wet] = binned_normal_pmf(puddles.traction, spec.n_bins)
    meta = dict(base.meta, puddles=asdict(puddles))
    return TerrainMap(semantic, elevation, np.zeros(spec.shape), gt, gt.copy(), wet, spec.resolution, "ood_arena",
                      seed, meta)


# -- configuration ------------------------------------------------------------


@dataclass(frozen=True)
class PlannerSpec:
    mode: str
    alpha: float = 1.0

    @property
    def label(self) -> str:
        return self.mode if self.mode in ("nominal", "expected") else f"{self.mode}@{self.alpha:g}"


DEFAULT_PLANNERS = (
    PlannerSpec("nominal"),
    PlannerSpec("cvar_dyn", 1.0),
    PlannerSpec("cvar_dyn", 0.6),
    PlannerSpec("cvar_dyn", 0.4),
    PlannerSpec("cvar_dyn", 0.2),
    PlannerSpec("cvar_cost", 0.4),
)


@dataclass(frozen=True)
class ExperimentConfig:
    kind: str = "planner"
    arena: ArenaSpec = field(default_factory=ArenaSpec)
    planners: tuple[PlannerSpec, ...] = DEFAULT_PLANNERS
    penalty_weights: tuple[float, ...] = (0.0, 0.1, 0.3, 1.0)
    penalty_alphas: tuple[float, ...] = (0.2, 0.4, 0.6, 1.0)
    g_thresholds: tuple[float, ...] = (-math.inf, 0.0, 0.01, 0.05, 0.25)
    ood_handling: tuple[str, ...] = ("zero_traction", "penalty")
    ood_penalty_weight: float = 1.0
    ood_alpha: float = 0.2
    puddles: PuddleSpec = field(default_factory=PuddleSpec)
    losses: tuple[str, ...] = ("uce", "uemd2")
    multipliers: tuple[int, ...] = (1,)
    model_seeds: tuple[int, ...] = (0,)
    nav_alpha: float = 0.4
    include_gt_bound: bool = True
    train_multiplier: int = 10
    train_steps: tuple[int, int] = (1500, 500)
    n_maps: int = 10
    n_realizations: int = 3
    n_repeats: int = 1
    time_limit: float = 15.0
    mppi: MppiConfig = field(default_factory=lambda: MppiConfig(horizon=100, n_rollouts=1024))
    cvar_cost_maps: int = 16
    seed: int = 0
    jobs: int = 1
    diagnostics: bool = False

    def __post_init__(self):
        if self.kind not in EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.kind!r}; choose from {', '.join(EXPERIMENTS)}")
        if min(self.n_maps, self.n_realizations, self.n_repeats) < 1:
            raise ValueError("need at least one trial per cell")
        if self.time_limit <= 0:
            raise ValueError("time limit must be positive")
        for loss in self.losses:
            if loss not in LOSS_WEIGHTS:
                raise ValueError(f"unknown loss {loss!r}")
        if self.jobs < 1:
            raise ValueError("jobs must be at least 1")

    def to_dict(self) -> dict:
        return _jsonable(asdict(self))


def _tuple_of(value, convert=float):
    return tuple(convert(v) for v in value)


def experiment_config_from_dict(data: dict) -> ExperimentConfig:
    """Inverse of ``ExperimentConfig.to_dict`` (non-finite floats arrive as strings)."""
    d = dict(data)
    d["arena"] = ArenaSpec(**{**d["arena"], "start": tuple(d["arena"]["start"]), "goal": tuple(d["arena"]["goal"])})
    d["puddles"] = PuddleSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in d["puddles"].items()})
    d["planners"] = tuple(PlannerSpec(**p) for p in d["planners"])
    m = dict(d["mppi"])
    d["mppi"] = MppiConfig(
        horizon=m["horizon"], n_rollouts=m["n_rollouts"], noise_std=tuple(m["noise_std"]), temperature=m["temperature"],
        dynamics=DynamicsConfig(**m["dynamics"]), risk=RiskConfig(**m["risk"]),
    )
    for key in ("penalty_weights", "penalty_alphas", "g_thresholds"):
        d[key] = _tuple_of(d[key])
    d["losses"] = tuple(d["losses"])
    d["ood_handling"] = tuple(d["ood_handling"])
    d["multipliers"] = _tuple_of(d["multipliers"], int)
    d["model_seeds"] = _tuple_of(d["model_seeds"], int)
    d["train_steps"] = _tuple_of(d["train_steps"], int)
    return ExperimentConfig(**d)


def _jsonable(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def desk_config(kind: str, **overrides) -> ExperimentConfig:
    """Reduced-trial defaults that finish on a laptop core."""
    base = {
        "planner": dict(),
        "penalty": dict(planners=()),
        "ood": dict(arena=ArenaSpec(veg_density=0.3), time_limit=30.0, n_maps=10, n_realizations=5),
        "loss_nav": dict(time_limit=40.0, n_maps=10, n_realizations=1, n_repeats=3,
                         mppi=MppiConfig(horizon=100, n_rollouts=512)),
    }[kind]
    return ExperimentConfig(kind=kind, **{**base, **overrides})


def paper_scale(cfg: ExperimentConfig) -> ExperimentConfig:
    """Full trial counts: 40 maps x 5 realizations (loss study: 20 maps x 5 x 3 repeats)."""
    if cfg.kind == "loss_nav":
        return replace(cfg, n_maps=20, n_realizations=5, n_repeats=3, model_seeds=(0, 1, 2, 3, 4),
                       multipliers=(1, 10, 100), mppi=replace(cfg.mppi, horizon=100, n_rollouts=1024))
    return replace(cfg, n_maps=40, n_realizations=5, cvar_cost_maps=1024,
                   mppi=replace(cfg.mppi, horizon=100, n_rollouts=1024))


# -- trials -------------------------------------------------------------------


@dataclass(frozen=True)
class TrialTask:
    """Everything a worker needs to run one episode."""

    trial_id: str
    cell: dict
    map_index: int
    realization: int
    repeat: int
    map_seed: int
    world_seed: int
    plan_seed: int
    world_kind: str
    planner: PlannerSpec
    penalty: object = None
    model_key: str | None = None


_MODELS: dict[str, EvidentialModel] = {}


def _init_worker(models):
    _MODELS.clear()
    _MODELS.update(models)


@lru_cache(maxsize=64)
def _world(kind: str, arena: ArenaSpec, puddles: PuddleSpec, seed: int) -> TerrainMap:
    if kind == "arena":
        return gen_arena(arena, seed)
    if kind == "ood_arena":
        return gen_ood_arena(arena, puddles, seed)
    if kind == "test":
        return gen_terrain(TerrainConfig("test", n_bins=arena.n_bins), seed)
    raise ValueError(f"unknown world kind {kind!r}")


def _start_goal(world: TerrainMap, cfg: ExperimentConfig):
    if world.kind == "test":
        # opposite diagonal corners
        w, h = world.extent
        return (1.0, 1.0, math.atan2(h, w)), GoalSpec((w - 1.0, h - 1.0), 1.0)
    return cfg.arena.start, cfg.arena.goal_spec


def _planning_map(world: TerrainMap, task: TrialTask) -> PlanningMap:
    if task.model_key is None:
        pm = gt_planning_map(world)
    else:
        pm = predict_map(_MODELS[task.model_key], world)
    if task.penalty is not None:
        pm = apply_aux_penalties(pm, task.penalty)
    return pm


def run_trial(task: TrialTask, cfg: ExperimentConfig) -> dict:
    world = _world(task.world_kind, cfg.arena, cfg.puddles, task.map_seed)
    pm = _planning_map(world, task)
    start, goal = _start_goal(world, cfg)
    risk = RiskConfig(task.planner.mode, task.planner.alpha, cfg.cvar_cost_maps)
    mppi = replace(cfg.mppi, risk=risk)
    traction = sample_world_traction(world, np.random.default_rng(task.world_seed))
    res = run_closed_loop(world, pm, goal, mppi, start, cfg.time_limit, task.plan_seed, world_traction=traction,
                          record=cfg.diagnostics)
    cells = _visited_cells(res.trajectory, world)
    out = {
        "schema_version": RESULTS_SCHEMA_VERSION,
        "experiment": cfg.kind,
        "trial_id": task.trial_id,
        "cell": task.cell,
        "cell_id": cell_id(task.cell),
        "map_index": task.map_index,
        "realization": task.realization,
        "repeat": task.repeat,
        "master_seed": cfg.seed,
        "map_seed": task.map_seed,
        "world_seed": task.world_seed,
        "plan_seed": task.plan_seed,
        "success": bool(res.success),
        "time_to_goal": res.time_to_goal,
        "steps": res.steps,
        "veg_visits": int(sum(world.semantic[c] == VEGETATION for c in cells)),
        "ood_visits": int(sum(bool(world.ood[c]) for c in cells)),
        "path_length": float(np.sum(np.hypot(*np.diff(res.trajectory[:, :2], axis=0).T))),
    }
    if cfg.diagnostics:
        out["diagnostics"] = [asdict(d) for d in res.diagnostics]
    return out


def _visited_cells(trajectory, world: TerrainMap):
    rows, cols = world.shape
    out = []
    for px, py in trajectory[:, :2]:
        r, c = math.floor(py / world.resolution), math.floor(px / world.resolution)
        if 0 <= r < rows and 0 <= c < cols:
            out.append((r, c))
    return out


def cell_id(cell: dict) -> str:
    return "|".join(f"{k}={cell[k]}" for k in sorted(cell))


def _task(cfg: ExperimentConfig, cell: dict, m: int, r: int, rep: int, world_kind: str, planner: PlannerSpec,
          penalty=None, model_key=None) -> TrialTask:
    cid = cell_id(cell)
    # map and world realizations are shared by every cell; planner noise is per (cell, trial)
    return TrialTask(
        trial_id=f"{cfg.kind}/{cid}/m{m}/r{r}/k{rep}",
        cell=cell,
        map_index=m,
        realization=r,
        repeat=rep,
        map_seed=derive_seed(cfg.seed, "map", world_kind, m),
        world_seed=derive_seed(cfg.seed, "world", world_kind, m, r),
        plan_seed=derive_seed(cfg.seed, "plan", m, r, rep),
        world_kind=world_kind,
        planner=planner,
        penalty=penalty,
        model_key=model_key,
    )


def _grid(cfg: ExperimentConfig, cell: dict, world_kind: str, planner: PlannerSpec, penalty=None, model_key=None):
    return [
        _task(cfg, cell, m, r, k, world_kind, planner, penalty, model_key)
        for m in range(cfg.n_maps)
        for r in range(cfg.n_realizations)
        for k in range(cfg.n_repeats)
    ]


def execute(tasks, cfg: ExperimentConfig, models=None) -> list[dict]:
    """Run tasks serially or on ``cfg.jobs`` processes; output is ordered by task index either way."""
    models = models or {}
    if cfg.jobs == 1 or len(tasks) <= 1:
        _init_worker(models)
        return [run_trial(t, cfg) for t in tasks]
    with ProcessPoolExecutor(max_workers=cfg.jobs, initializer=_init_worker, initargs=(models,)) as pool:
        return list(pool.map(run_trial, tasks, [cfg] * len(tasks), chunksize=max(1, len(tasks) // (4 * cfg.jobs))))


# -- aggregation ----------------------------------------------------------------


@dataclass
class MetricsTable:
    """One row per configuration cell; ``trials`` holds the raw per-trial records."""

    rows: list[dict]
    trials: list[dict]
    config: dict = field(default_factory=dict)

    def row(self, **match) -> dict:
        hits = [r for r in self.rows if all(r["cell"].get(k) == v for k, v in match.items())]
        if len(hits) != 1:
            raise KeyError(f"{len(hits)} rows match {match}")
        return hits[0]


def aggregate(trials: list[dict]) -> list[dict]:
    """Per-cell success rate and time-to-goal statistics over successful trials, in first-seen cell order."""
    groups: dict[str, list[dict]] = {}
    for t in trials:
        groups.setdefault(t["cell_id"], []).append(t)
    rows = []
    for cid, ts in groups.items():
        times = np.array([t["time_to_goal"] for t in ts if t["success"]], dtype=float)
        rows.append({
            "cell_id": cid,
            "cell": ts[0]["cell"],
            "n_trials": len(ts),
            "n_success": int(len(times)),
            "success_rate": len(times) / len(ts),
            "mean_time_to_goal": float(times.mean()) if len(times) else None,
            "std_time_to_goal": float(times.std()) if len(times) else None,
            "mean_veg_visits": float(np.mean([t["veg_visits"] for t in ts])),
            "mean_ood_visits": float(np.mean([t["ood_visits"] for t in ts])),
        })
    return rows


def _table(trials, cfg):
    return MetricsTable(aggregate(trials), trials, cfg.to_dict())


# -- experiments ------------------------------------------------------------------


def run_planner_benchmark(cfg: ExperimentConfig) -> MetricsTable:
    """Every planner on the same arenas and traction realizations, planning on the true PMFs."""
    tasks = []
    for p in cfg.planners:
        tasks += _grid(cfg, {"planner": p.label, "mode": p.mode, "alpha": p.alpha}, "arena", p)
    return _table(execute(tasks, cfg), cfg)


def run_penalty_tradeoff(cfg: ExperimentConfig) -> MetricsTable:
    """Nominal-traction planner with a vegetation penalty sweep, against CVaR-Dyn over alpha."""
    tasks = []
    for w in cfg.penalty_weights:
        tasks += _grid(cfg, {"planner": "nominal+penalty", "weight": w, "alpha": None}, "arena",
                       PlannerSpec("nominal"), SemanticPenalty(VEGETATION, w) if w > 0 else None)
    for a in cfg.penalty_alphas:
        tasks += _grid(cfg, {"planner": "cvar_dyn", "weight": None, "alpha": a}, "arena", PlannerSpec("cvar_dyn", a))
    return _table(execute(tasks, cfg), cfg)


def train_loss_variant(loss: str, multiplier: int, seed: int, cfg: ExperimentConfig, w3: float = 1e-5) -> EvidentialModel:
    """Model trained on the training-kind maps with the given loss and sample multiplier."""
    maps = gen_dataset("train", seed=cfg.seed)
    train_set, _ = collect_training_data(maps, multiplier=multiplier, seed=derive_seed(cfg.seed, "collect", multiplier),
                                         n_bins=cfg.arena.n_bins)
    w1, w2 = LOSS_WEIGHTS[loss]
    joint, flow = cfg.train_steps
    tcfg = TrainConfig(n_bins=cfg.arena.n_bins, w1=w1, w2=w2, w3=w3, joint_steps=joint, flow_steps=flow, seed=seed)
    return train(train_set, tcfg)


def _ood_rule(handling: str, g: float, weight: float):
    if handling == "zero_traction":
        return OodZeroTraction(g)
    if handling == "penalty":
        return OodPenalty(g, weight)
    raise ValueError(f"unknown OOD handling {handling!r}")


def run_ood_study(cfg: ExperimentConfig, model: EvidentialModel | None = None) -> MetricsTable:
    """Hybrid-loss model from the training kind, deployed on arenas with out-of-range puddles.

    The ``-inf`` threshold is the no-handling reference and is run once,
    shared by both handling modes.
    """
    if model is None:
        model = train_loss_variant("hybrid", cfg.train_multiplier, 0, cfg)
    planner = PlannerSpec("cvar_dyn", cfg.ood_alpha)
    tasks = []
    for g in cfg.g_thresholds:
        for handling in (("none",) if g == -math.inf else cfg.ood_handling):
            rule = None if handling == "none" else _ood_rule(handling, g, cfg.ood_penalty_weight)
            cell = {"handling": handling, "g_thres": g if math.isfinite(g) else str(g)}
            tasks += _grid(cfg, cell, "ood_arena", planner, rule, "hybrid")
    return _table(execute(tasks, cfg, {"hybrid": model}), cfg)


def run_loss_nav_study(cfg: ExperimentConfig, models: dict | None = None) -> MetricsTable:
    """CVaR-Dyn navigation across test maps, corner to corner, per loss variant and sample multiplier."""
    if models is None:
        models = {
            f"{loss}/x{mult}/s{seed}": train_loss_variant(loss, mult, seed, cfg)
            for loss in cfg.losses
            for mult in cfg.multipliers
            for seed in cfg.model_seeds
        }
    planner = PlannerSpec("cvar_dyn", cfg.nav_alpha)
    tasks = []
    if cfg.include_gt_bound:
        tasks += _grid(cfg, {"loss": "gt", "multiplier": None, "model_seed": None}, "test", planner)
    for key in models:
        loss, mult, seed = key.split("/")
        cell = {"loss": loss, "multiplier": int(mult[1:]), "model_seed": int(seed[1:])}
        tasks += _grid(cfg, cell, "test", planner, None, key)
    return _table(execute(tasks, cfg, models), cfg)


RUNNERS = {
    "planner": run_planner_benchmark,
    "penalty": run_penalty_tradeoff,
    "ood": run_ood_study,
    "loss_nav": run_loss_nav_study,
}


def run_experiment(cfg: ExperimentConfig) -> MetricsTable:
    return RUNNERS[cfg.kind](cfg)


def loss_summary(table: MetricsTable) -> dict:
    """Pooled success rate and mean time-to-goal per loss variant (over all its cells)."""
    out = {}
    for loss in dict.fromkeys(t["cell"]["loss"] for t in table.trials):
        ts = [t for t in table.trials if t["cell"]["loss"] == loss]
        times = [t["time_to_goal"] for t in ts if t["success"]]
        out[loss] = {
            "n_trials": len(ts),
            "success_rate": len(times) / len(ts),
            "mean_time_to_goal": float(np.mean(times)) if times else None,
        }
    return out


# -- output -------------------------------------------------------------------------


SUMMARY_FIELDS = ("cell_id", "n_trials", "n_success", "success_rate", "mean_time_to_goal", "std_time_to_goal",
                  "mean_veg_visits", "mean_ood_visits")


def write_results(table: MetricsTable, out_dir, manifest_id: str | None = None) -> dict:
    """Write ``summary.csv``, ``trials.jsonl`` and ``long.csv`` (plus ``diagnostics.jsonl``
    with one record per planning step when trials carry diagnostics); returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"summary": out / "summary.csv", "trials": out / "trials.jsonl", "long": out / "long.csv"}
    if any("diagnostics" in t for t in table.trials):
        paths["diagnostics"] = out / "diagnostics.jsonl"
        with open(paths["diagnostics"], "w") as f:
            for t in table.trials:
                for step, d in enumerate(t.get("diagnostics", ())):
                    f.write(json.dumps({"manifest_id": manifest_id, "trial_id": t["trial_id"], "step": step, **d}) + "\n")
    with open(paths["summary"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("schema_version", "manifest_id") + SUMMARY_FIELDS)
        for row in table.rows:
            w.writerow((RESULTS_SCHEMA_VERSION, manifest_id) + tuple(row[k] for k in SUMMARY_FIELDS))
    with open(paths["trials"], "w") as f:
        for t in table.trials:
            record = {k: v for k, v in t.items() if k != "diagnostics"}
            f.write(json.dumps(_jsonable(dict(record, manifest_id=manifest_id)), sort_keys=True) + "\n")
    with open(paths["long"], "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(("manifest_id", "cell_id", "metric", "value"))
        for row in table.rows:
            for metric in ("success_rate", "mean_time_to_goal", "std_time_to_goal"):
                w.writerow((manifest_id, row["cell_id"], metric, row[metric]))
    return {k: str(v) for k, v in paths.items()}


def read_trials(path) -> list[dict]:
    with open(path) as f:
        return [json.loads(line) for line in f if line.strip()]


def default_jobs() -> int:
    return os.cpu_count() or 1

