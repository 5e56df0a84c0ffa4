"""Command-line entry point: ``evora gen-terrain | train | eval | bench``.

Each command resolves its configuration (defaults < ``--config`` JSON < flags;
the master seed additionally honours ``EVORA_SEED`` unless ``--seed`` is given),
writes ``manifest.json`` into the output directory before anything else, and
stamps the manifest id into every file it produces.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 internal
invariant violation.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from evora import __version__
from evora.bench import (
    EXPERIMENTS,
    LOSS_WEIGHTS,
    desk_config,
    experiment_config_from_dict,
    paper_scale,
    run_experiment,
    write_results,
)
from evora.model import (
    TractionDataset,
    TrainConfig,
    kl_divergence,
    load_model,
    predict_batch,
    run_sweep,
    save_model,
    select_model,
    sweep_grid,
    train,
    validation_scores,
)
from evora.evidential import emd2_loss
from evora.terrain import (
    DATASET_SIZES,
    KINDS,
    TerrainConfig,
    auc_pr,
    auc_roc,
    circular_path,
    gen_terrain,
    load_json,
    load_samples_jsonl,
    predict_map,
    save_json,
    save_samples_jsonl,
    simulate_collection,
    split_halves,
    terrain_from_dict,
    terrain_to_dict,
)

EXIT_CONFIG, EXIT_DATA, EXIT_INVARIANT = 2, 3, 4
SEED_ENV = "EVORA_SEED"


class ConfigError(Exception):
    pass


class DataError(Exception):
    pass


# -- manifest -----------------------------------------------------------------


def resolve_seed(flag: int | None, config: dict) -> int:
    if flag is not None:
        return flag
    if os.environ.get(SEED_ENV):
        try:
            return int(os.environ[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer") from exc
    return int(config.get("seed", 0))


def _clean(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return str(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class Manifest:
    """Run record written before any output; the id hashes command, config, seed and code version."""

    def __init__(self, command: str, config: dict, seed: int, out_dir: Path):
        self.out_dir = Path(out_dir)
        self.data = {
            "command": command,
            "config": _clean(config),
            "master_seed": seed,
            "code_version": __version__,
            "outputs": [],
        }
        # worker count never changes results, so it stays out of the id
        hashed = dict(self.data, config={k: v for k, v in self.data["config"].items() if k != "jobs"})
        digest = hashlib.blake2b(json.dumps(hashed, sort_keys=True).encode(), digest_size=8).hexdigest()
        self.data["manifest_id"] = f"{command}-{digest}"
        self._t0 = time.perf_counter()

    @property
    def id(self) -> str:
        return self.data["manifest_id"]

    @property
    def path(self) -> Path:
        return self.out_dir / "manifest.json"

    def write(self, status: str = "running"):
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.data["status"] = status
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True) + "\n")

    def add(self, path) -> Path:
        self.data["outputs"].append(str(Path(path).name))
        return Path(path)

    def finish(self):
        self.data["wall_clock_s"] = round(time.perf_counter() - self._t0, 3)
        self.write("complete")


def _load_config_file(path) -> dict:
    if path is None:
        return {}
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    return data


def _override(config: dict, **flags) -> dict:
    return {**config, **{k: v for k, v in flags.items() if v is not None}}


def _dry_run(command: str, config: dict, seed: int) -> int:
    print(json.dumps({"command": command, "master_seed": seed, "config": _clean(config)}, indent=2, sort_keys=True))
    return 0


# -- gen-terrain ----------------------------------------------------------------


def cmd_gen_terrain(args) -> int:
    conf = _load_config_file(args.config)
    conf = _override(conf, kind=args.kind, count=args.count, multiplier=args.multiplier, rows=args.rows, cols=args.cols,
                     samples_per_cell=args.samples_per_cell)
    kind = conf.get("kind", "train")
    if kind not in KINDS:
        raise ConfigError(f"unknown terrain kind {kind!r}; choose from {', '.join(KINDS)}")
    count = int(conf.get("count", DATASET_SIZES[kind]))
    multiplier = int(conf.get("multiplier", 1))
    spc = int(conf.get("samples_per_cell", 2))
    if count < 1 or multiplier < 1 or spc < 1:
        raise ConfigError("count, multiplier and samples per cell must be at least 1")
    seed = resolve_seed(args.seed, conf)
    try:
        tcfg = TerrainConfig(kind, rows=int(conf.get("rows", 60)), cols=int(conf.get("cols", 60)),
                             n_bins=int(conf.get("n_bins", 20)))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    resolved = {"kind": kind, "count": count, "multiplier": multiplier, "samples_per_cell": spc,
                "rows": tcfg.rows, "cols": tcfg.cols, "n_bins": tcfg.n_bins}
    if args.dry_run:
        return _dry_run("gen-terrain", resolved, seed)

    man = Manifest("gen-terrain", resolved, seed, args.out)
    man.write()
    offset = list(KINDS).index(kind) * 1000
    for i in range(count):
        terrain = gen_terrain(tcfg, seed * 10000 + offset + i)
        data = terrain_to_dict(terrain)
        data["header"]["manifest_id"] = man.id
        save_json(data, man.add(man.out_dir / f"map_{i:03d}.json"))
        samples = simulate_collection(terrain, circular_path(terrain, samples_per_cell=spc), multiplier, seed)
        save_samples_jsonl(samples, man.add(man.out_dir / f"samples_{i:03d}.jsonl"), {"manifest_id": man.id})
    man.finish()
    print(f"wrote {count} {kind} maps to {man.out_dir}")
    return 0


def _load_maps(directory, semantic_table=None):
    d = Path(directory)
    paths = sorted(d.glob("map_*.json"))
    if not d.is_dir() or not paths:
        raise DataError(f"no map_*.json files in {directory}")
    maps = []
    for p in paths:
        try:
            data = load_json(p)
            terrain = terrain_from_dict(data)
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"bad map file {p}: {exc}") from exc
        if semantic_table is not None and data["header"].get("semantic_table") != list(semantic_table):
            raise DataError(f"{p.name} semantic classes {data['header'].get('semantic_table')} differ from {list(semantic_table)}")
        maps.append(terrain)
    return maps, paths


def _load_datasets(directory, n_bins):
    maps, paths = _load_maps(directory)
    train_parts, val_parts = [], []
    for i, (terrain, p) in enumerate(zip(maps, paths)):
        sp = p.with_name(p.name.replace("map_", "samples_").replace(".json", ".jsonl"))
        if not sp.exists():
            raise DataError(f"missing collection file {sp}")
        if terrain.n_bins != n_bins:
            raise DataError(f"{p.name} uses {terrain.n_bins} bins, training config wants {n_bins}")
        try:
            samples = load_samples_jsonl(sp)
        except (KeyError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"bad collection file {sp}: {exc}") from exc
        left, right = split_halves(samples, terrain)
        train_parts.append(left.to_dataset(n_bins, i))
        val_parts.append(right.to_dataset(n_bins, i))
    train_set, val_set = TractionDataset.concat(train_parts), TractionDataset.concat(val_parts)
    if len(train_set) == 0:
        raise DataError("collection files hold no training samples")
    return train_set, val_set


# -- train ------------------------------------------------------------------------


def _train_config(conf: dict, loss: str, seed: int) -> TrainConfig:
    if loss not in LOSS_WEIGHTS:
        raise ConfigError(f"unknown loss {loss!r}; choose from {', '.join(LOSS_WEIGHTS)}")
    fields = {k: v for k, v in conf.items() if k in TrainConfig.__dataclass_fields__}
    w1, w2 = LOSS_WEIGHTS[loss]
    fields.update(w1=w1, w2=w2, seed=seed)
    try:
        return TrainConfig(**fields)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training config: {exc}") from exc


def cmd_train(args) -> int:
    conf = _load_config_file(args.config)
    conf = _override(conf, loss=args.loss, lr=args.lr, w3=args.entropy_weight, joint_steps=args.joint_steps,
                     flow_steps=args.flow_steps, n_bins=args.bins)
    loss = conf.pop("loss", "hybrid")
    seed = resolve_seed(args.seed, conf)
    tcfg = _train_config(conf, loss, seed)
    seeds = tuple(range(seed, seed + args.seeds)) if args.sweep else (seed,)
    resolved = {"loss": loss, "sweep": bool(args.sweep), "seeds": list(seeds), "data": str(args.data),
                "train_config": tcfg.to_dict()}
    if args.dry_run:
        return _dry_run("train", resolved, seed)

    train_set, val_set = _load_datasets(args.data, tcfg.n_bins)
    man = Manifest("train", resolved, seed, args.out)
    man.write()
    sweep_rows = []
    if args.sweep:
        models, sweep_rows = run_sweep(train_set, val_set, sweep_grid(loss, tcfg), seeds)
        model = select_model(models, val_set)
    else:
        model = train(train_set, tcfg)
    scores = validation_scores(model, val_set)
    metrics = {"manifest_id": man.id, "val_emd2": scores.emd2, "val_uce": scores.uce, "val_kl": scores.kl,
               "n_train_cells": len(train_set), "n_val_cells": len(val_set), "sweep": sweep_rows}
    save_model(model, man.add(man.out_dir / "model.json"), {"manifest_id": man.id, "loss": loss})
    (man.add(man.out_dir / "metrics.json")).write_text(json.dumps(_clean(metrics), indent=2) + "\n")
    man.finish()
    print(f"val EMD2 {scores.emd2:.4f}  KL {scores.kl:.4f}  -> {man.out_dir / 'model.json'}")
    return 0


# -- eval -------------------------------------------------------------------------


def evaluate_maps(model, maps) -> dict:
    """Cell-averaged EMD^2 and KL of posterior means against ground truth, plus OOD AUCs where defined."""
    emd, kl, rocs, prs = [], [], [], []
    for terrain in maps:
        if terrain.n_bins != model.n_bins:
            raise DataError(f"map has {terrain.n_bins} bins, model has {model.n_bins}")
        beta_lin, beta_ang, _, _ = predict_batch(model, terrain.features())
        mean_lin = beta_lin / beta_lin.sum(axis=1, keepdims=True)
        mean_ang = beta_ang / beta_ang.sum(axis=1, keepdims=True)
        gl = terrain.gt_lin.reshape(-1, terrain.n_bins)
        ga = terrain.gt_ang.reshape(-1, terrain.n_bins)
        emd.append(float(np.mean(0.5 * (emd2_loss(mean_lin, gl) + emd2_loss(mean_ang, ga)))))
        kl.append(float(np.mean(0.5 * (kl_divergence(gl, mean_lin) + kl_divergence(ga, mean_ang)))))
        if 0 < terrain.ood.sum() < terrain.ood.size:
            pm = predict_map(model, terrain)
            rocs.append(auc_roc(-pm.confidence, terrain.ood))
            prs.append(auc_pr(-pm.confidence, terrain.ood))
    return {
        "n_maps": len(maps),
        "emd2": float(np.mean(emd)),
        "kl": float(np.mean(kl)),
        "kl_floor": 1e-12,
        "auc_roc": float(np.mean(rocs)) if rocs else None,
        "auc_roc_std": float(np.std(rocs)) if rocs else None,
        "auc_pr": float(np.mean(prs)) if prs else None,
        "n_ood_maps": len(rocs),
    }


def cmd_eval(args) -> int:
    seed = resolve_seed(args.seed, {})
    resolved = {"model": str(args.model), "maps": [str(m) for m in args.maps]}
    if args.dry_run:
        return _dry_run("eval", resolved, seed)
    try:
        model = load_model(args.model)
    except (OSError, KeyError, ValueError, json.JSONDecodeError) as exc:
        raise DataError(f"cannot load model {args.model}: {exc}") from exc
    results = {}
    loaded = {str(d): _load_maps(d, model.semantic_classes)[0] for d in args.maps}
    man = Manifest("eval", resolved, seed, args.out)
    man.write()
    for name, maps in loaded.items():
        results[name] = evaluate_maps(model, maps)
    out = {"manifest_id": man.id, "results": results}
    (man.add(man.out_dir / "eval.json")).write_text(json.dumps(_clean(out), indent=2) + "\n")
    man.finish()
    for name, r in results.items():
        auc = "n/a" if r["auc_roc"] is None else f"{r['auc_roc']:.3f}"
        print(f"{name}: EMD2 {r['emd2']:.4f}  KL {r['kl']:.4f}  AUC-ROC {auc}")
    return 0


# -- bench ----------------------------------------------------------------------------


def cmd_bench(args) -> int:
    if args.manifest is None and args.experiment not in EXPERIMENTS:
        raise ConfigError(f"unknown experiment {args.experiment!r}; valid: {', '.join(EXPERIMENTS)}")
    if args.manifest:
        return _bench_from_manifest(args)
    conf = _load_config_file(args.config)
    seed = resolve_seed(args.seed, conf)
    overrides = {"seed": seed, "jobs": args.jobs or 1, "diagnostics": bool(args.diagnostics)}
    for key in ("n_maps", "n_realizations", "n_repeats", "time_limit"):
        value = getattr(args, key)
        if value is None:
            value = conf.get(key)
        if value is not None:
            overrides[key] = value
    try:
        cfg = desk_config(args.experiment, **overrides)
        veg = args.veg if args.veg is not None else conf.get("veg_density")
        if veg is not None:
            cfg = replace(cfg, arena=replace(cfg.arena, veg_density=float(veg)))
        if args.paper_scale:
            cfg = paper_scale(cfg)
            if args.n_maps or args.n_realizations:
                cfg = replace(cfg, **{k: v for k, v in overrides.items() if k in ("n_maps", "n_realizations")})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    if args.dry_run:
        return _dry_run("bench", cfg.to_dict(), seed)
    return _run_bench(cfg, args.out)


def _bench_from_manifest(args) -> int:
    try:
        data = json.loads(Path(args.manifest).read_text())
        if data.get("command") != "bench":
            raise ConfigError(f"{args.manifest} is not a bench manifest")
        cfg = experiment_config_from_dict(data["config"])
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"cannot rebuild config from {args.manifest}: {exc}") from exc
    if cfg.seed != data["master_seed"]:
        raise DataError("manifest seed and config seed disagree")
    if args.jobs:
        cfg = replace(cfg, jobs=args.jobs)
    if args.dry_run:
        return _dry_run("bench", cfg.to_dict(), cfg.seed)
    return _run_bench(cfg, args.out)


def _run_bench(cfg, out) -> int:
    seed = cfg.seed
    man = Manifest("bench", cfg.to_dict(), seed, out)
    man.write()
    table = run_experiment(cfg)
    for path in write_results(table, man.out_dir, man.id).values():
        man.add(path)
    man.finish()
    for row in table.rows:
        ttg = "-" if row["mean_time_to_goal"] is None else f"{row['mean_time_to_goal']:.2f}s"
        print(f"{row['cell_id']:<50} success {row['success_rate']:.2f}  time {ttg}  (n={row['n_trials']})")
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="evora", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"evora {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, out_default):
        p.add_argument("--config", help="JSON config; flags override its keys")
        p.add_argument("--seed", type=int, help=f"master seed (default: ${SEED_ENV} or config or 0)")
        p.add_argument("--out", default=out_default, help="output directory")
        p.add_argument("--dry-run", action="store_true", help="print the resolved config and exit")

    g = sub.add_parser("gen-terrain", help="generate terrain maps and simulated traction collections")
    common(g, "runs/terrain")
    g.add_argument("--kind", choices=tuple(KINDS))
    g.add_argument("--count", type=int, help="number of maps (default: dataset size for the kind)")
    g.add_argument("--multiplier", type=int, help="sample multiplier for the collection run")
    g.add_argument("--samples-per-cell", type=int)
    g.add_argument("--rows", type=int)
    g.add_argument("--cols", type=int)
    g.set_defaults(func=cmd_gen_terrain)

    t = sub.add_parser("train", help="train an evidential traction model")
    common(t, "runs/model")
    t.add_argument("--data", required=True, help="directory written by gen-terrain")
    t.add_argument("--loss", choices=tuple(LOSS_WEIGHTS))
    t.add_argument("--lr", type=float)
    t.add_argument("--entropy-weight", type=float)
    t.add_argument("--joint-steps", type=int)
    t.add_argument("--flow-steps", type=int)
    t.add_argument("--bins", type=int)
    t.add_argument("--sweep", action="store_true", help="run the hyperparameter grid and select on validation EMD2")
    t.add_argument("--seeds", type=int, default=5, help="seeds per grid cell with --sweep")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="EMD2 / KL against ground truth and OOD AUCs")
    common(e, "runs/eval")
    e.add_argument("--model", required=True)
    e.add_argument("--maps", required=True, nargs="+", help="one or more gen-terrain directories")
    e.set_defaults(func=cmd_eval)

    b = sub.add_parser("bench", help="navigation experiments")
    common(b, "runs/bench")
    b.add_argument("--experiment", help=f"one of: {', '.join(EXPERIMENTS)}")
    b.add_argument("--manifest", help="re-run exactly the configuration recorded in a bench manifest")
    b.add_argument("--veg", type=float, help="vegetation density at the arena centre")
    b.add_argument("--n-maps", type=int)
    b.add_argument("--n-realizations", type=int)
    b.add_argument("--n-repeats", type=int)
    b.add_argument("--time-limit", type=float)
    b.add_argument("--paper-scale", action="store_true", help="restore the full trial counts")
    b.add_argument("--diagnostics", action="store_true", help="also write per-step planner diagnostics JSONL")
    b.add_argument("--jobs", type=int, default=os.cpu_count() or 1, help="worker processes (default: logical cores)")
    b.set_defaults(func=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (AssertionError, FloatingPointError) as exc:
        print(f"internal invariant violated: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
