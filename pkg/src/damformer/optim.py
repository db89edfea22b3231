from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .tensor import ConfigError, NumericalError, Tensor

log = logging.getLogger(__name__)


@dataclass
class OptimizerConfig:
    lr: float = 6e-5
    weight_decay: float = 5e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 3000
    batch_size: int = 2
    clip_norm: float = 0.0  # 0 disables clipping

    def validate(self) -> None:
        if self.lr <= 0 or self.eps <= 0:
            raise ConfigError("opt.lr and opt.eps must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("opt.beta1/opt.beta2 must lie in [0, 1)")
        if self.weight_decay < 0 or self.steps < 0 or self.batch_size < 1 or self.clip_norm < 0:
            raise ConfigError("opt.weight_decay, opt.steps, opt.clip_norm must be >= 0 and opt.batch_size >= 1")


def adamw_update(theta, grad, m, v, t: int, cfg: OptimizerConfig):
    """One AdamW step on raw arrays; returns (theta, m, v).

    Weight decay is decoupled: it scales theta by lr*wd directly instead of
    entering the moment estimates.
    """
    if t < 1:
        raise ValueError("step counter t starts at 1")
    m = cfg.beta1 * m + (1 - cfg.beta1) * grad
    v = cfg.beta2 * v + (1 - cfg.beta2) * grad * grad
    m_hat = m / (1 - cfg.beta1**t)
    v_hat = v / (1 - cfg.beta2**t)
    theta = theta - cfg.lr * m_hat / (np.sqrt(v_hat) + cfg.eps) - cfg.lr * cfg.weight_decay * theta
    return theta, m, v


class AdamW:
    def __init__(self, named_params: list[tuple[str, Tensor]], cfg: OptimizerConfig, strict: bool = True):
        cfg.validate()
        self.cfg = cfg
        self.params = named_params
        self.strict = strict
        self.t = 0
        self.m = {k: np.zeros_like(p.data) for k, p in named_params}
        self.v = {k: np.zeros_like(p.data) for k, p in named_params}

    def clip(self) -> float:
        total = math.sqrt(sum(float(np.sum(p.grad.astype(np.float64) ** 2)) for _, p in self.params if p.grad is not None))
        if self.cfg.clip_norm > 0 and total > self.cfg.clip_norm:
            scale = self.cfg.clip_norm / total
            for _, p in self.params:
                if p.grad is not None:
                    p.grad = p.grad * p.grad.dtype.type(scale)
        return total

    def step(self) -> None:
        for name, p in self.params:
            if p.grad is not None and not np.all(np.isfinite(p.grad)):
                if self.strict:
                    raise NumericalError(f"non-finite gradient in parameter '{name}'")
                log.warning("non-finite gradient in %s; zeroed for this step", name)
                p.grad = np.nan_to_num(p.grad, nan=0.0, posinf=0.0, neginf=0.0)
        if self.cfg.clip_norm > 0:
            self.clip()
        self.t += 1
        for name, p in self.params:
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            theta, self.m[name], self.v[name] = adamw_update(p.data, g, self.m[name], self.v[name], self.t, self.cfg)
            p.data = theta.astype(p.dtype, copy=False)
