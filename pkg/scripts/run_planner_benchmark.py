"""Success rate and time-to-goal of the risk-aware planners on the vegetation arena."""

import time

from _common import config, parser, report
from evora.bench import ArenaSpec, run_planner_benchmark

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--veg", type=float, default=0.7, help="peak vegetation density")
    args = p.parse_args()
    started = time.time()
    table = run_planner_benchmark(config("planner", args, arena=ArenaSpec(veg_density=args.veg)))
    report(table, args, started)
