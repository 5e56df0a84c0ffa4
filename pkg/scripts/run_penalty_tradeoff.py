"""Semantic penalty weights versus CVaR-Dyn risk levels on the vegetation arena."""

import time

from _common import config, parser, report
from evora.bench import run_penalty_tradeoff

if __name__ == "__main__":
    args = parser(__doc__).parse_args()
    started = time.time()
    report(run_penalty_tradeoff(config("penalty", args)), args, started)
