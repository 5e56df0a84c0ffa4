"""Navigation time of models trained with UCE versus UEMD² at a given sample multiplier."""

import time

from _common import config, parser, report
from evora.bench import loss_summary, run_loss_nav_study

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--multipliers", type=int, nargs="+", default=[1])
    p.add_argument("--model-seeds", type=int, nargs="+", default=[0])
    args = p.parse_args()
    started = time.time()
    cfg = config("loss_nav", args, multipliers=tuple(args.multipliers), model_seeds=tuple(args.model_seeds))
    table = run_loss_nav_study(cfg)
    report(table, args, started)
    for loss, s in loss_summary(table).items():
        print(f"{loss:<6} success={s['success_rate']:.3f} mean_time={s['mean_time_to_goal']}")
