"""Seconds per forward+backward+update step for a preset.

    python3 scripts/benchmark_step.py [--config default] [--steps 20] [--batch 2]
"""

import argparse
import time

import numpy as np

from damformer import config
from damformer import tensor as T
from damformer.data import SyntheticDataset, collate
from damformer.losses import compound_loss
from damformer.model import DamFormer
from damformer.optim import AdamW
from damformer.tensor import Tensor


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="default")
    ap.add_argument("--steps", type=int, default=20)
    ap.add_argument("--batch", type=int, default=2)
    args = ap.parse_args()

    cfg = config.load(args.config)
    model = DamFormer(cfg.model, seed=cfg.run.seed)
    opt = AdamW(list(model.named_parameters()), cfg.opt)
    pre, post, loc, dam = collate([SyntheticDataset(cfg.data.synth, args.batch)[i] for i in range(args.batch)])
    times = []
    for _ in range(args.steps):
        t = time.perf_counter()
        out = compound_loss(*model(Tensor(pre), Tensor(post)), loc, dam, cfg.loss)
        model.zero_grad()
        T.backward(out.overall)
        opt.step()
        times.append(time.perf_counter() - t)
    print(f"{model.num_parameters()} parameters, {np.median(times):.3f} s/step (median of {args.steps})")


if __name__ == "__main__":
    main()
