"""Multitemporal fusion of the pre/post feature pyramids into task-specific pyramids."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Linear, Module
from .tensor import ConfigError, ShapeError, Tensor


@dataclass
class FusionConfig:
    kernel: int = 3
    reduction: int = 4
    dup_merge: bool = False  # separate merge conv per task instead of a shared one

    def validate(self, channels) -> None:
        if self.kernel < 1 or self.kernel % 2 == 0:
            raise ConfigError(f"fus.kernel must be a positive odd integer, got {self.kernel}")
        if self.reduction < 1:
            raise ConfigError("fus.reduction must be >= 1")
        for c in channels:
            if c % self.reduction:
                raise ConfigError(f"fus.reduction {self.reduction} does not divide level width {c}")


class ChannelAttention(Module):
    """Channel gate from avg- and max-pooled descriptors through one shared bottleneck MLP."""

    def __init__(self, rng, channels: int, reduction: int):
        if channels % reduction:
            raise ConfigError(f"channels {channels} not divisible by reduction {reduction}")
        self.fc1 = Linear(rng, channels, channels // reduction)
        self.fc2 = Linear(rng, channels // reduction, channels)

    def gate(self, f: Tensor) -> Tensor:
        avg = self.fc2(T.relu(self.fc1(T.global_avg_pool(f))))
        mx = self.fc2(T.relu(self.fc1(T.global_max_pool(f))))
        return T.sigmoid(T.add(avg, mx))

    def __call__(self, f: Tensor) -> Tensor:
        return T.scale_channels(f, self.gate(f))


class LevelFusion(Module):
    def __init__(self, rng, channels: int, cfg: FusionConfig):
        pad = cfg.kernel // 2
        self.merge = Conv2d(rng, 2 * channels, channels, cfg.kernel, 1, pad)
        self.merge_dam = Conv2d(rng, 2 * channels, channels, cfg.kernel, 1, pad) if cfg.dup_merge else None
        self.att_loc = ChannelAttention(rng, channels, cfg.reduction)
        self.att_dam = ChannelAttention(rng, channels, cfg.reduction)

    def __call__(self, f_pre: Tensor, f_post: Tensor) -> tuple[Tensor, Tensor]:
        if f_pre.shape != f_post.shape:
            raise ShapeError(f"fusion inputs differ: {f_pre.shape} vs {f_post.shape}")
        stacked = T.concat([f_pre, f_post], axis=1)
        merged = self.merge(stacked)
        merged_dam = self.merge_dam(stacked) if self.merge_dam is not None else merged
        return self.att_loc(merged), self.att_dam(merged_dam)


class MultitemporalFusion(Module):
    def __init__(self, channels, cfg: FusionConfig, rng: np.random.Generator):
        cfg.validate(channels)
        self.levels = [LevelFusion(rng, c, cfg) for c in channels]

    def __call__(self, p_pre: list[Tensor], p_post: list[Tensor]) -> tuple[list[Tensor], list[Tensor]]:
        if len(p_pre) != len(self.levels) or len(p_post) != len(self.levels):
            raise ShapeError(f"expected {len(self.levels)} pyramid levels, got {len(p_pre)} and {len(p_post)}")
        loc, dam = [], []
        for fuse, a, b in zip(self.levels, p_pre, p_post):
            fl, fd = fuse(a, b)
            loc.append(fl)
            dam.append(fd)
        return loc, dam
