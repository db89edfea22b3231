"""Lightweight dual-task decoder: cross-level fusion plus 1x1 classifiers."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, Module
from .tensor import ConfigError, ShapeError, Tensor

DAMAGE_CLASSES = 5  # background, no damage, minor, major, destroyed


@dataclass
class DecoderConfig:
    width: int = 64
    scale: int = 4  # decode at 1/scale of input resolution
    addback: str = "post_conv"  # where localization features join the damage branch

    def validate(self) -> None:
        if self.width < 1:
            raise ConfigError("dec.width must be positive")
        if self.scale not in (1, 2, 4):
            raise ConfigError(f"dec.scale must be 1, 2 or 4, got {self.scale}")
        if self.addback not in ("post_conv", "pre_conv"):
            raise ConfigError(f"dec.addback must be post_conv|pre_conv, got {self.addback!r}")


class CrossLevelFusion(Module):
    """Project each level to a common width, upsample, concatenate, fuse with a 1x1 conv."""

    def __init__(self, rng, channels, width: int):
        self.width = width
        self.proj = [Conv2d(rng, c, width, 1, init="trunc_normal") for c in channels]
        self.fuse = Conv2d(rng, len(channels) * width, width, 1, init="trunc_normal")

    def upsampled(self, pyramid: list[Tensor], size: tuple[int, int]) -> list[Tensor]:
        if len(pyramid) != len(self.proj):
            raise ShapeError(f"expected {len(self.proj)} levels, got {len(pyramid)}")
        return [T.bilinear_upsample(p(f), *size) for p, f in zip(self.proj, pyramid)]

    def __call__(self, pyramid: list[Tensor], size: tuple[int, int], extra: Tensor | None = None) -> Tensor:
        maps = self.upsampled(pyramid, size)
        if extra is not None:
            maps = [T.add(m, extra) for m in maps]
        return self.fuse(T.concat(maps, axis=1))


class DualTaskDecoder(Module):
    def __init__(self, channels, cfg: DecoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.loc_fuse = CrossLevelFusion(rng, channels, cfg.width)
        self.loc_head = Conv2d(rng, cfg.width, 1, 1, init="trunc_normal")
        self.dam_fuse = CrossLevelFusion(rng, channels, cfg.width)
        self.dam_head = Conv2d(rng, cfg.width, DAMAGE_CLASSES, 1, init="trunc_normal")

    def fused(self, p_loc: list[Tensor], p_dam: list[Tensor], addback: bool = True) -> tuple[Tensor, Tensor]:
        """Fused multi-level maps (F_loc, F_dam) at the decode scale."""
        h, w = p_loc[0].shape[2:]
        f4 = 4 // self.cfg.scale
        size = (h * f4, w * f4)
        if self.loc_fuse.width != self.dam_fuse.width:
            raise ConfigError("decoder branches must share one fused width")
        f_loc = self.loc_fuse(p_loc, size)
        if not addback:
            return f_loc, self.dam_fuse(p_dam, size)
        if self.cfg.addback == "pre_conv":
            return f_loc, self.dam_fuse(p_dam, size, extra=f_loc)
        return f_loc, T.add(self.dam_fuse(p_dam, size), f_loc)

    def __call__(self, p_loc: list[Tensor], p_dam: list[Tensor], addback: bool = True) -> tuple[Tensor, Tensor]:
        if [f.shape[2:] for f in p_loc] != [f.shape[2:] for f in p_dam]:
            raise ShapeError("localization and damage pyramids come from different input sizes")
        f_loc, f_dam = self.fused(p_loc, p_dam, addback)
        h, w = p_loc[0].shape[2:]
        out = (h * 4, w * 4)
        loc = T.bilinear_upsample(self.loc_head(f_loc), *out)
        dam = T.bilinear_upsample(self.dam_head(f_dam), *out)
        return loc, dam
