"""Train the overfit preset and score it on its own training pairs.

    python3 scripts/run_overfit.py [--lr 4e-4] [--steps 3000] [--out runs/overfit]
"""

import argparse
import logging
import time

from damformer import config
from damformer.train import evaluate, train


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lr", type=float)
    ap.add_argument("--steps", type=int)
    ap.add_argument("--out", default="runs/overfit")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    cfg = config.load("overfit")
    if args.lr:
        cfg.opt.lr = args.lr
    if args.steps is not None:
        cfg.opt.steps = args.steps
    t = time.perf_counter()
    res = train(cfg, args.out)
    report = evaluate(cfg, res.model)
    last = res.history[-1] if res.history else {"overall": float("nan")}
    print(f"{len(res.history)} steps in {time.perf_counter() - t:.0f} s, final L_overall {last['overall']:.4f}")
    print(report.to_table(), end="")


if __name__ == "__main__":
    main()
