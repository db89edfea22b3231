"""Flat ``key = value`` run configuration.

Keys are ``<section>.<field>`` where section is one of enc, fus, dec, loss,
opt, data, run. Lists are comma-separated. ``#`` starts a comment. Unknown
keys are rejected.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .data import SynthConfig
from .decoder import DecoderConfig
from .encoder import EncoderConfig
from .fusion import FusionConfig
from .losses import LossConfig
from .model import ModelConfig
from .optim import OptimizerConfig


class ConfigFileError(ValueError):
    pass


@dataclass
class DataConfig:
    train_dir: str = ""  # empty: synthesize
    eval_dir: str = ""
    n_train: int = 200
    n_eval: int = 50
    eval_split: str = "eval"  # "train" scores the training samples themselves
    synth: SynthConfig = field(default_factory=SynthConfig)


@dataclass
class RunSettings:
    seed: int = 0
    out_dir: str = "runs/default"
    checkpoint_every: int = 0  # 0: only the final checkpoint
    log_every: int = 50
    workers: int = 1
    debug: bool = False


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    opt: OptimizerConfig = field(default_factory=OptimizerConfig)
    data: DataConfig = field(default_factory=DataConfig)
    run: RunSettings = field(default_factory=RunSettings)

    def sections(self) -> dict[str, object]:
        return {
            "enc": self.model.enc,
            "fus": self.model.fus,
            "dec": self.model.dec,
            "loss": self.loss,
            "opt": self.opt,
            "data": self.data,
            "synth": self.data.synth,
            "run": self.run,
        }

    def validate(self) -> None:
        self.model.enc.validate()
        self.model.fus.validate(self.model.enc.channels)
        self.model.dec.validate()
        self.loss.validate()
        self.opt.validate()
        self.data.synth.validate()
        if self.data.eval_split not in ("eval", "train"):
            raise ConfigFileError(f"data.eval_split must be eval|train, got {self.data.eval_split!r}")
        if self.run.workers < 1:
            raise ConfigFileError("run.workers must be >= 1")


def _fields(obj) -> dict[str, type]:
    hints = typing.get_type_hints(type(obj))
    return {f.name: hints[f.name] for f in dataclasses.fields(obj) if not dataclasses.is_dataclass(hints[f.name])}


def _parse_value(raw: str, typ, key: str):
    try:
        if typ is bool:
            if raw.lower() in ("true", "1", "yes"):
                return True
            if raw.lower() in ("false", "0", "no"):
                return False
            raise ValueError(raw)
        if typ in (int, float, str):
            return typ(raw)
        if typing.get_origin(typ) is tuple:
            inner = typing.get_args(typ)[0]
            return tuple(inner(v.strip()) for v in raw.split(",") if v.strip())
    except ValueError:
        raise ConfigFileError(f"{key}: cannot parse {raw!r} as {getattr(typ, '__name__', typ)}") from None
    raise ConfigFileError(f"{key}: unsupported field type {typ}")


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def apply(cfg: RunConfig, key: str, raw: str) -> None:
    section, _, name = key.partition(".")
    target = cfg.sections().get(section)
    if target is None or name not in _fields(target):
        raise ConfigFileError(f"unknown config key {key!r}")
    setattr(target, name, _parse_value(raw, _fields(target)[name], key))


def parse(text: str, base: RunConfig | None = None) -> RunConfig:
    cfg = base or RunConfig()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigFileError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        try:
            apply(cfg, key, raw)
        except ConfigFileError as exc:
            raise ConfigFileError(f"line {lineno}: {exc}") from None
    return cfg


def dumps(cfg: RunConfig) -> str:
    lines = []
    for section, obj in cfg.sections().items():
        for name in _fields(obj):
            lines.append(f"{section}.{name} = {_format_value(getattr(obj, name))}")
    return "\n".join(lines) + "\n"


PRESETS = ("default", "overfit", "toy")


def load(path_or_preset: str) -> RunConfig:
    """Read a config file, or one of the bundled presets by name."""
    if path_or_preset in PRESETS:
        text = resources.files("damformer.presets").joinpath(f"{path_or_preset}.cfg").read_text("utf-8")
    else:
        text = Path(path_or_preset).read_text("utf-8")
    cfg = parse(text)
    cfg.validate()
    return cfg
