"""Confidence thresholding of unfamiliar terrain: trains the hybrid model, then deploys on the puddle arena."""

import time

from _common import config, parser, report
from evora.bench import run_ood_study
from evora.model import load_model

if __name__ == "__main__":
    p = parser(__doc__)
    p.add_argument("--model", help="reuse a saved model.json instead of training")
    args = p.parse_args()
    started = time.time()
    model = load_model(args.model) if args.model else None
    report(run_ood_study(config("ood", args), model), args, started)
