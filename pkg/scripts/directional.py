"""Train a desk model on sparse 2-speaker mixtures and compare 1-spk vs 2-spk extraction.

    python scripts/directional.py --seed 0 --budget-min 15 --out results/directional_seed0.json
"""

from __future__ import annotations

import argparse
import json
import logging
import time
from pathlib import Path

from avisam.experiment import DirectionalSetup, run_directional


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--budget-min", type=float, default=15.0, help="CPU minutes of training (<= 30)")
    ap.add_argument("--n-train", type=int, default=500)
    ap.add_argument("--n-test", type=int, default=100)
    ap.add_argument("--out", type=Path)
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(asctime)s %(message)s")

    setup = DirectionalSetup(seed=args.seed, budget_min=args.budget_min, n_train=args.n_train, n_test=args.n_test)
    t0 = time.process_time()
    result = run_directional(setup)
    result["cpu_seconds"] = time.process_time() - t0
    print(json.dumps({k: v for k, v in result.items() if k != "history"}, indent=2))
    if args.out:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(result, indent=2))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
