"""Training, evaluation and prediction loops."""

from __future__ import annotations

import contextlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import checkpoint
from . import tensor as T
from .config import RunConfig, dumps
from .data import DirectoryDataset, FormatError, SyntheticDataset, batches, collate, encode_pgm, encode_ppm, render_damage_palette
from .losses import compound_loss
from .metrics import MetricsReport, predictions_from_logits
from .model import DamFormer
from .optim import AdamW
from .tensor import Tensor

log = logging.getLogger(__name__)

LOG_COLUMNS = ("step", "overall", "loc", "dam", "bce", "dice", "ce", "lovasz")


def make_dataset(cfg: RunConfig, split: str):
    d = cfg.data
    root = d.train_dir if split == "train" else d.eval_dir
    if root:
        ds = DirectoryDataset(root)
    elif split == "train":
        ds = SyntheticDataset(d.synth, d.n_train, offset=0)
    else:
        ds = SyntheticDataset(d.synth, d.n_eval, offset=d.n_train)
    first = ds[0]
    h, w = first.size
    if h % 32 or w % 32 or first.pre.shape[0] != 3:
        raise FormatError(f"{split} samples must be 3xHxW with H, W divisible by 32, got {first.pre.shape}", 0)
    return ds


def eval_dataset(cfg: RunConfig):
    return make_dataset(cfg, "train" if cfg.data.eval_split == "train" else "eval")


@contextlib.contextmanager
def workers(n: int):
    """Limit BLAS threads; kernels are reduction-order deterministic regardless."""
    with threadpool_limits(limits=n):
        yield


@dataclass
class TrainResult:
    model: DamFormer
    history: list[dict] = field(default_factory=list)
    checkpoint: Path | None = None


def train(cfg: RunConfig, out_dir=None, steps: int | None = None) -> TrainResult:
    cfg.validate()
    steps = cfg.opt.steps if steps is None else steps
    out = Path(out_dir or cfg.run.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    T.set_dtype("f32")
    T.set_debug(cfg.run.debug)
    dataset = make_dataset(cfg, "train")  # data errors surface before step 0
    model = DamFormer(cfg.model, seed=cfg.run.seed)
    opt = AdamW(list(model.named_parameters()), cfg.opt, strict=not cfg.run.debug)
    (out / "config.cfg").write_text(dumps(cfg), encoding="utf-8")

    history = []
    stream = batches(dataset, cfg.opt.batch_size, cfg.run.seed)
    with workers(cfg.run.workers), open(out / "train_log.tsv", "w", encoding="utf-8") as fh:
        fh.write("\t".join(LOG_COLUMNS) + "\n")
        for step in range(1, steps + 1):
            pre, post, loc, dam = collate(next(stream))
            loc_logits, dam_logits = model(Tensor(pre), Tensor(post))
            losses = compound_loss(loc_logits, dam_logits, loc, dam, cfg.loss)
            model.zero_grad()
            T.backward(losses.overall)
            opt.step()
            row = {"step": step, **losses.as_dict()}
            history.append(row)
            fh.write("\t".join(repr(row[c]) if c != "step" else str(step) for c in LOG_COLUMNS) + "\n")
            if cfg.run.log_every and step % cfg.run.log_every == 0:
                log.info("step %d  L=%.4f  loc=%.4f  dam=%.4f", step, row["overall"], row["loc"], row["dam"])
            if cfg.run.checkpoint_every and step % cfg.run.checkpoint_every == 0:
                checkpoint.save(out / f"step{step:06d}.dfw", model.state_dict())
    path = out / "model.dfw"
    checkpoint.save(path, model.state_dict())
    return TrainResult(model, history, path)


def load_model(cfg: RunConfig, ckpt) -> DamFormer:
    T.set_dtype("f32")
    model = DamFormer(cfg.model, seed=cfg.run.seed)
    model.load_state_dict(checkpoint.load(ckpt))
    return model


def infer(model: DamFormer, pre: np.ndarray, post: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Masks (loc, dam) of shape [N,H,W] for a batch of image pairs."""
    with T.no_grad():
        loc_logits, dam_logits = model(Tensor(pre), Tensor(post))
    return predictions_from_logits(loc_logits.data, dam_logits.data)


def evaluate(cfg: RunConfig, model: DamFormer, dataset=None) -> MetricsReport:
    dataset = dataset if dataset is not None else eval_dataset(cfg)

    def score(i: int) -> MetricsReport:
        s = dataset[i]
        loc, dam = infer(model, s.pre[None], s.post[None])
        return MetricsReport().accumulate(loc[0], dam[0], s.loc, s.dam)

    with workers(cfg.run.workers), T.no_grad():
        if cfg.run.workers > 1:
            with ThreadPoolExecutor(cfg.run.workers) as pool:
                parts = list(pool.map(score, range(len(dataset))))
        else:
            parts = [score(i) for i in range(len(dataset))]
    report = MetricsReport()
    for p in parts:
        report = report.merge(p)
    return report


def evaluate_masks(pairs) -> MetricsReport:
    """Score precomputed (pred_loc, pred_dam, ref_loc, ref_dam) tuples."""
    report = MetricsReport()
    for pl, pd, rl, rd in pairs:
        report.accumulate(pl, pd, rl, rd)
    return report


def predict(cfg: RunConfig, model: DamFormer, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = eval_dataset(cfg)
    written = []
    for i in range(len(dataset)):
        s = dataset[i]
        loc, dam = infer(model, s.pre[None], s.post[None])
        stem = getattr(dataset, "ids", None)
        sid = stem[i] if stem else f"{i:05d}"
        p_loc, p_dam = out / f"{sid}.loc.pgm", out / f"{sid}.dam.ppm"
        p_loc.write_bytes(encode_pgm(loc[0] * 255))
        p_dam.write_bytes(encode_ppm(render_damage_palette(dam[0])))
        written += [p_loc, p_dam]
    return written
