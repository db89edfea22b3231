"""Parameter containers and the handful of layers the model is assembled from."""

from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Module:
    """Attribute-ordered parameter container.

    Parameters are discovered by walking instance attributes in assignment
    order, so parameter names (``stage1.blocks.0.attn.q.weight``) are stable.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, value in vars(self).items():
            full = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield full, value
            elif isinstance(value, Module):
                yield from value.named_parameters(full + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{full}.{i}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def num_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        problems = []
        for k, p in own.items():
            if k not in state:
                problems.append(f"{k}: missing")
            elif tuple(state[k].shape) != p.shape:
                problems.append(f"{k}: expected {p.shape}, got {tuple(state[k].shape)}")
        problems += [f"{k}: unexpected" for k in state if k not in own]
        if problems:
            raise ValueError("checkpoint does not match model:\n  " + "\n  ".join(problems))
        for k, p in own.items():
            p.data = np.array(state[k], dtype=p.dtype)


def param(data: np.ndarray) -> Tensor:
    return Tensor(np.asarray(data, dtype=T.get_dtype()), requires_grad=True)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples redrawn until they fall inside two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


class Linear(Module):
    def __init__(self, rng: np.random.Generator, d_in: int, d_out: int, bias: bool = True):
        self.weight = param(trunc_normal(rng, (d_in, d_out)))
        self.bias = param(np.zeros(d_out)) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        return T.linear(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int = 1,
        pad: int = 0,
        groups: int = 1,
        exact: bool = True,
        init: str = "fan_out",
    ):
        if c_in % groups or c_out % groups:
            raise T.ConfigError(f"Conv2d: channels {c_in}->{c_out} not divisible by groups {groups}")
        shape = (c_out, c_in // groups, kernel, kernel)
        if init == "trunc_normal":
            # 1x1 convs acting as per-pixel projections
            self.weight = param(trunc_normal(rng, shape))
        else:
            fan_out = kernel * kernel * c_out // groups
            self.weight = param(rng.normal(0.0, math.sqrt(2.0 / fan_out), size=shape))
        self.bias = param(np.zeros(c_out))
        self.stride, self.pad, self.groups, self.exact = stride, pad, groups, exact

    def __call__(self, x: Tensor) -> Tensor:
        return T.conv2d(x, self.weight, self.bias, self.stride, self.pad, self.groups, self.exact)


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        self.weight = param(np.ones(dim))
        self.bias = param(np.zeros(dim))
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.weight, self.bias, self.eps)
