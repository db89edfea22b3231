"""Central finite-difference checks of the autodiff engine (run in float64)."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .tensor import Tensor

# gradients smaller than this are compared absolutely; FD noise at h=1e-5 is ~1e-10
REL_FLOOR = 1e-6


def rel_error(analytic, numeric, floor: float = REL_FLOOR) -> float:
    a, n = np.asarray(analytic, dtype=np.float64), np.asarray(numeric, dtype=np.float64)
    den = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / den)) if a.size else 0.0


def numerical_grad(f: Callable[[], Tensor], x: Tensor, h: float = 1e-5, index=None) -> np.ndarray:
    """d f / d x by central differences, over all entries or the flat ``index`` subset."""
    flat = x.data.reshape(-1)
    idx = range(flat.size) if index is None else index
    out = np.zeros(len(idx)) if index is not None else np.zeros(flat.size)
    with T.no_grad():
        for k, i in enumerate(idx):
            old = flat[i]
            flat[i] = old + h
            fp = float(f().data)
            flat[i] = old - h
            fm = float(f().data)
            flat[i] = old
            out[k] = (fp - fm) / (2 * h)
    return out if index is not None else out.reshape(x.shape)


def check(f: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between backward() and central differences over every input entry."""
    for x in inputs:
        x.grad = None
    T.backward(f())
    worst = 0.0
    for x in inputs:
        analytic = x.grad if x.grad is not None else np.zeros_like(x.data)
        worst = max(worst, rel_error(analytic, numerical_grad(f, x, h)))
    return worst


@dataclass
class ParamCheck:
    name: str
    size: int
    entry_error: float
    directional_error: float

    @property
    def error(self) -> float:
        return max(self.entry_error, self.directional_error)


def check_parameters(
    f: Callable[[], Tensor],
    named: Sequence[tuple[str, Tensor]],
    entries_per_param: int = 2,
    seed: int = 0,
    h: float = 1e-5,
) -> list[ParamCheck]:
    """Check every parameter tensor of a large model.

    Each tensor gets a random-direction directional derivative (touching all
    of its entries at once) plus a few individually sampled entries.
    """
    rng = np.random.default_rng(seed)
    for _, p in named:
        p.grad = None
    T.backward(f())
    results = []
    for name, p in named:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        idx = rng.choice(p.data.size, size=min(entries_per_param, p.data.size), replace=False)
        entry = rel_error(g.reshape(-1)[idx], numerical_grad(f, p, h, index=idx))

        d = rng.standard_normal(p.shape)
        d /= np.linalg.norm(d)
        base = p.data.copy()
        with T.no_grad():
            p.data = base + h * d
            fp = float(f().data)
            p.data = base - h * d
            fm = float(f().data)
        p.data = base
        directional = rel_error(float(np.sum(g * d)), (fp - fm) / (2 * h))
        results.append(ParamCheck(name, p.data.size, entry, directional))
    return results


def full_model_check(size: int = 32, channels=(8, 16, 24, 32), seed: int = 0, entries_per_param: int = 2):
    """Gradient-check the whole model plus compound loss on a random toy pair, in float64."""
    from .decoder import DecoderConfig
    from .encoder import EncoderConfig
    from .fusion import FusionConfig
    from .losses import compound_loss
    from .model import DamFormer, ModelConfig

    with T.precision("f64"):
        heads = tuple(max(1, c // 8) for c in channels)
        cfg = ModelConfig(
            enc=EncoderConfig(channels=tuple(channels), heads=heads),
            fus=FusionConfig(reduction=4),
            dec=DecoderConfig(width=8),
        )
        model = DamFormer(cfg, seed=seed)
        rng = np.random.default_rng(seed + 1)
        pre = Tensor(rng.random((1, 3, size, size)))
        post = Tensor(rng.random((1, 3, size, size)))
        loc = (rng.random((1, size, size)) > 0.6).astype(np.int64)
        dam = loc * rng.integers(1, 5, (1, size, size))
        # scale logits up so every loss term carries gradient signal
        for p in (model.decoder.loc_head.weight, model.decoder.dam_head.weight):
            p.data *= 50.0

        def f():
            loc_logits, dam_logits = model(pre, post)
            return compound_loss(loc_logits, dam_logits, loc, dam).overall

        return check_parameters(f, list(model.named_parameters()), entries_per_param, seed)


def op_suite(seed: int = 0) -> dict[str, float]:
    """Max relative FD error for every differentiable primitive, in float64.

    Each op output is contracted with a fixed random tensor so all output
    entries contribute. Inputs to kinked ops (abs, relu, max) stay away from
    their kinks.
    """
    rng = np.random.default_rng(seed)

    def leaf(*shape, lo=None):
        data = rng.standard_normal(shape)
        if lo is not None:  # keep |x| >= lo
            data = np.sign(data) * (np.abs(data) + lo)
        return Tensor(data, requires_grad=True)

    def run(fn, *inputs):
        probe = {}

        def f():
            out = fn(*inputs)
            if "r" not in probe:
                probe["r"] = Tensor(rng.standard_normal(out.shape))
            return T.sum_(T.mul(out, probe["r"]))

        return check(f, inputs)

    with T.precision("f64"):
        idx = rng.integers(0, 12, (3, 5))
        cases = {
            "add": (T.add, leaf(3, 4), leaf(3, 4)),
            "sub": (T.sub, leaf(3, 4), leaf(3, 4)),
            "neg": (T.neg, leaf(3, 4)),
            "mul": (T.mul, leaf(3, 4), leaf(3, 4)),
            "div": (T.div, leaf(3, 4), leaf(3, 4, lo=0.5)),
            "exp": (T.exp, leaf(3, 4)),
            "log": (lambda a: T.log(T.abs_(a)), leaf(3, 4, lo=0.5)),
            "abs": (T.abs_, leaf(3, 4, lo=0.1)),
            "relu": (T.relu, leaf(3, 4, lo=0.1)),
            "sigmoid": (T.sigmoid, leaf(3, 4)),
            "softplus": (T.softplus, leaf(3, 4)),
            "gelu": (T.gelu, leaf(3, 4)),
            "sum": (lambda a: T.sum_(a, axis=1), leaf(3, 4)),
            "mean": (lambda a: T.mean(a, axis=0), leaf(3, 4)),
            "reshape": (lambda a: T.reshape(a, (4, 3)), leaf(3, 4)),
            "transpose": (lambda a: T.transpose(a, (2, 0, 1)), leaf(2, 3, 4)),
            "concat": (lambda a, b: T.concat([a, b], axis=1), leaf(2, 3), leaf(2, 2)),
            "take": (lambda a: T.take(a, idx), leaf(3, 4)),
            "matmul": (T.matmul, leaf(2, 3, 4), leaf(2, 4, 5)),
            "linear": (T.linear, leaf(2, 3, 4), leaf(4, 5), leaf(5)),
            "add_bias": (lambda x, b: T.add_bias(x, b, axis=1), leaf(2, 3, 4), leaf(3)),
            "scale_channels": (T.scale_channels, leaf(2, 3, 4, 4), leaf(2, 3)),
            "softmax": (lambda a: T.softmax(a, axis=1), leaf(2, 5, 3)),
            "log_softmax": (lambda a: T.log_softmax(a, axis=1), leaf(2, 5, 3)),
            "layer_norm": (T.layer_norm, leaf(2, 3, 6), leaf(6), leaf(6)),
            "conv2d": (lambda x, w, b: T.conv2d(x, w, b, stride=2, pad=1), leaf(2, 3, 7, 7), leaf(4, 3, 3, 3), leaf(4)),
            "conv2d_depthwise": (lambda x, w: T.conv2d(x, w, pad=1, groups=4), leaf(1, 4, 5, 5), leaf(4, 1, 3, 3)),
            "conv2d_1x1": (T.conv2d, leaf(2, 3, 4, 4), leaf(5, 3, 1, 1), leaf(5)),
            "bilinear_upsample": (lambda x: T.bilinear_upsample(x, 7, 9), leaf(1, 2, 3, 4)),
            "global_avg_pool": (T.global_avg_pool, leaf(2, 3, 4, 4)),
            "global_max_pool": (T.global_max_pool, leaf(2, 3, 4, 4)),
        }
        return {name: run(fn, *inputs) for name, (fn, *inputs) in cases.items()}
