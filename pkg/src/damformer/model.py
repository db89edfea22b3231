from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decoder import DecoderConfig, DualTaskDecoder
from .encoder import EncoderConfig, MiTEncoder
from .fusion import FusionConfig, MultitemporalFusion
from .nn import Module
from .tensor import Tensor


@dataclass
class ModelConfig:
    enc: EncoderConfig = field(default_factory=EncoderConfig)
    fus: FusionConfig = field(default_factory=FusionConfig)
    dec: DecoderConfig = field(default_factory=DecoderConfig)


class DamFormer(Module):
    """Siamese encoder -> multitemporal fusion -> dual-task decoder."""

    def __init__(self, cfg: ModelConfig, seed: int = 0):
        rng = np.random.default_rng(seed)
        self.cfg = cfg
        self.encoder = MiTEncoder(cfg.enc, rng)
        self.fusion = MultitemporalFusion(cfg.enc.channels, cfg.fus, rng)
        self.decoder = DualTaskDecoder(cfg.enc.channels, cfg.dec, rng)

    def __call__(self, pre: Tensor, post: Tensor) -> tuple[Tensor, Tensor]:
        p_pre, p_post = self.encoder.encode_siamese(pre, post)
        p_loc, p_dam = self.fusion(p_pre, p_post)
        return self.decoder(p_loc, p_dam)
