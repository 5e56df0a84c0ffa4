"""Shared helpers for the experiment scripts."""

import argparse
import json
import time
from pathlib import Path

from evora.bench import default_jobs, desk_config, paper_scale, write_results


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--n-maps", type=int)
    p.add_argument("--n-realizations", type=int)
    p.add_argument("--n-repeats", type=int)
    p.add_argument("--time-limit", type=float)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=default_jobs())
    p.add_argument("--paper-scale", action="store_true")
    p.add_argument("--out", type=Path, help="directory for summary.csv / trials.jsonl")
    return p


def config(kind: str, args, **extra):
    overrides = {k: v for k, v in dict(
        n_maps=args.n_maps, n_realizations=args.n_realizations, n_repeats=args.n_repeats,
        time_limit=args.time_limit).items() if v is not None}
    cfg = desk_config(kind, seed=args.seed, jobs=args.jobs, **overrides, **extra)
    return paper_scale(cfg) if args.paper_scale else cfg


def report(table, args, started: float):
    for row in table.rows:
        t = row["mean_time_to_goal"]
        print(f"{row['cell_id']:<45} n={row['n_trials']:<4} success={row['success_rate']:.3f} "
              f"time={'-' if t is None else f'{t:.2f}'}")
    if args.out:
        paths = write_results(table, args.out)
        (Path(args.out) / "config.json").write_text(json.dumps(table.config, indent=2))
        print("wrote", ", ".join(str(p) for p in paths.values()))
    print(f"elapsed {time.time() - started:.1f} s")
