"""Hierarchical Mix-Transformer encoder shared by the pre- and post-disaster streams."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .nn import Conv2d, LayerNorm, Linear, Module
from .tensor import ConfigError, ShapeError, Tensor


@dataclass
class EncoderConfig:
    blocks: tuple[int, ...] = (3, 4, 6, 3)
    channels: tuple[int, ...] = (16, 32, 64, 128)
    heads: tuple[int, ...] = (1, 2, 4, 8)
    sr_ratios: tuple[int, ...] = (8, 4, 2, 1)
    expansion: int = 4
    patch_mode: str = "overlap"  # or "nonoverlap": 4x4 kernel, stride 4
    in_channels: int = 3

    def validate(self) -> None:
        for name in ("blocks", "channels", "heads", "sr_ratios"):
            if len(getattr(self, name)) != 4:
                raise ConfigError(f"enc.{name} needs 4 entries, got {getattr(self, name)}")
        for c, h in zip(self.channels, self.heads):
            if h < 1 or c % h:
                raise ConfigError(f"enc.channels {c} not divisible by enc.heads {h}")
        if min(self.sr_ratios) < 1 or min(self.blocks) < 0 or self.expansion < 1:
            raise ConfigError("enc.sr_ratios and enc.expansion must be positive, enc.blocks non-negative")
        if self.patch_mode not in ("overlap", "nonoverlap"):
            raise ConfigError(f"enc.patch_mode must be overlap|nonoverlap, got {self.patch_mode!r}")

    def embed_geometry(self, stage: int) -> tuple[int, int, int]:
        """(kernel, stride, pad) of the patch embedding that opens ``stage``."""
        if stage == 0:
            return (7, 4, 3) if self.patch_mode == "overlap" else (4, 4, 0)
        return (3, 2, 1)


# documented full-width preset; heads must divide the widths
MIT_B_PRESET = EncoderConfig(channels=(64, 128, 320, 512), heads=(1, 2, 5, 8))


class OverlapPatchEmbed(Module):
    """Strided convolution followed by layer norm over channels."""

    def __init__(self, rng, c_in: int, c_out: int, kernel: int, stride: int, pad: int):
        self.proj = Conv2d(rng, c_in, c_out, kernel, stride, pad, exact=False)
        self.norm = LayerNorm(c_out)
        self.kernel, self.pad = kernel, pad

    def __call__(self, x: Tensor) -> tuple[Tensor, int, int]:
        h, w = x.shape[2:]
        if min(h, w) + 2 * self.pad < self.kernel:
            raise ConfigError(f"padded input {h}x{w} (pad {self.pad}) smaller than patch kernel {self.kernel}")
        y = self.proj(x)
        n, c, ho, wo = y.shape
        tokens = T.transpose(T.reshape(y, (n, c, ho * wo)), (0, 2, 1))
        return self.norm(tokens), ho, wo


class EfficientSelfAttention(Module):
    """Multi-head attention whose keys/values come from a spatially reduced grid."""

    def __init__(self, rng, dim: int, heads: int, sr_ratio: int):
        if dim % heads:
            raise ConfigError(f"attention dim {dim} not divisible by heads {heads}")
        self.heads, self.sr_ratio = heads, sr_ratio
        self.scale = 1.0 / math.sqrt(dim // heads)
        self.q = Linear(rng, dim, dim)
        self.k = Linear(rng, dim, dim)
        self.v = Linear(rng, dim, dim)
        self.proj = Linear(rng, dim, dim)
        if sr_ratio > 1:
            self.sr = Conv2d(rng, dim, dim, sr_ratio, sr_ratio, 0)
            self.norm = LayerNorm(dim)

    def _split_heads(self, x: Tensor) -> Tensor:
        n, length, c = x.shape
        return T.transpose(T.reshape(x, (n, length, self.heads, c // self.heads)), (0, 2, 1, 3))

    def reduce(self, x: Tensor, h: int, w: int) -> Tensor:
        """Key/value source tokens: the grid shrunk by sr_ratio per axis, [N, L/sr^2, C]."""
        if self.sr_ratio == 1:
            return x
        n, _, c = x.shape
        grid = T.reshape(T.transpose(x, (0, 2, 1)), (n, c, h, w))
        red = self.sr(grid)
        kv_len = red.shape[2] * red.shape[3]
        return self.norm(T.transpose(T.reshape(red, (n, c, kv_len)), (0, 2, 1)))

    def __call__(self, x: Tensor, h: int, w: int) -> Tensor:
        n, length, c = x.shape
        if length != h * w:
            raise ShapeError(f"token count {length} != {h}*{w}")
        if h % self.sr_ratio or w % self.sr_ratio:
            raise ConfigError(f"grid {h}x{w} not divisible by sr_ratio {self.sr_ratio}")
        q = self._split_heads(self.q(x))
        src = self.reduce(x, h, w)
        k = self._split_heads(self.k(src))
        v = self._split_heads(self.v(src))
        scores = T.mul(T.matmul(q, T.transpose(k, (0, 1, 3, 2))), self.scale)
        attn = T.softmax(scores, axis=-1)
        out = T.matmul(attn, v)  # N, heads, L, d
        out = T.reshape(T.transpose(out, (0, 2, 1, 3)), (n, length, c))
        return self.proj(out)


class MixFFN(Module):
    """Linear expand, 3x3 depthwise conv, GELU, linear project."""

    def __init__(self, rng, dim: int, expansion: int):
        hidden = dim * expansion
        self.fc1 = Linear(rng, dim, hidden)
        self.dwconv = Conv2d(rng, hidden, hidden, 3, 1, 1, groups=hidden)
        self.fc2 = Linear(rng, hidden, dim)

    def __call__(self, x: Tensor, h: int, w: int) -> Tensor:
        n, length, _ = x.shape
        if length != h * w:
            raise ShapeError(f"MixFFN: token count {length} != {h}*{w}")
        y = self.fc1(x)
        hidden = y.shape[2]
        grid = T.reshape(T.transpose(y, (0, 2, 1)), (n, hidden, h, w))
        grid = self.dwconv(grid)
        y = T.transpose(T.reshape(grid, (n, hidden, length)), (0, 2, 1))
        return self.fc2(T.gelu(y))


class Block(Module):
    def __init__(self, rng, dim: int, heads: int, sr_ratio: int, expansion: int):
        self.norm1 = LayerNorm(dim)
        self.attn = EfficientSelfAttention(rng, dim, heads, sr_ratio)
        self.norm2 = LayerNorm(dim)
        self.ffn = MixFFN(rng, dim, expansion)

    def __call__(self, x: Tensor, h: int, w: int) -> Tensor:
        x = T.add(x, self.attn(self.norm1(x), h, w))
        return T.add(x, self.ffn(self.norm2(x), h, w))


class Stage(Module):
    def __init__(self, rng, cfg: EncoderConfig, i: int):
        c_in = cfg.in_channels if i == 0 else cfg.channels[i - 1]
        k, s, p = cfg.embed_geometry(i)
        self.embed = OverlapPatchEmbed(rng, c_in, cfg.channels[i], k, s, p)
        self.blocks = [
            Block(rng, cfg.channels[i], cfg.heads[i], cfg.sr_ratios[i], cfg.expansion) for _ in range(cfg.blocks[i])
        ]

    def __call__(self, x: Tensor) -> Tensor:
        tokens, h, w = self.embed(x)
        for blk in self.blocks:
            tokens = blk(tokens, h, w)
        n, _, c = tokens.shape
        return T.reshape(T.transpose(tokens, (0, 2, 1)), (n, c, h, w))


class MiTEncoder(Module):
    """One stream of the encoder; the siamese pair reuses this single parameter set."""

    def __init__(self, cfg: EncoderConfig, rng: np.random.Generator):
        cfg.validate()
        self.cfg = cfg
        self.stages = [Stage(rng, cfg, i) for i in range(4)]

    def __call__(self, x: Tensor) -> list[Tensor]:
        pyramid = []
        for stage in self.stages:
            x = stage(x)
            pyramid.append(x)
        return pyramid

    def encode_siamese(self, pre: Tensor, post: Tensor) -> tuple[list[Tensor], list[Tensor]]:
        if pre.shape != post.shape:
            raise ShapeError(f"pre {pre.shape} and post {post.shape} images differ in shape")
        h, w = pre.shape[2:]
        if h % 32 or w % 32:
            raise ShapeError(f"image size {h}x{w} must be divisible by 32")
        return self(pre), self(post)
