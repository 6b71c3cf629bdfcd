"""Flat ``section.key = value`` configuration files.

``#`` starts a comment, blank lines are ignored and whitespace around ``=``
does not matter.  Values are parsed according to the type of the field's
default: integers, reals, booleans (true/false/yes/no/1/0), strings, and
comma-separated tuples.  Unknown keys and malformed values are reported with
their line number.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

from dcan.augment import AugmentSpec
from dcan.fusion import FusionParams
from dcan.net import ConfigError, DcanConfig, TrainSchedule
from dcan.synth import GlandSceneSpec

__all__ = ["Config", "ConfigError", "load", "parse", "reference", "validate"]


@dataclass
class DataOptions:
    n_scenes: int = 32
    seed: int = 0


@dataclass
class TrainOptions:
    seed: int = 0
    contour_radius: int = 3
    augment: bool = True
    log_every: int = 100


@dataclass
class GradcheckOptions:
    samples: int = 20
    seeds: int = 3
    epsilon: float = 1e-5
    tolerance: float = 1e-4


def miniature_net() -> DcanConfig:
    """Small architecture used for gradient checks."""
    return DcanConfig(input_size=16, num_pool_stages=2, channels_per_stage=(4, 4), branch_taps=(1, 2),
                      branch_channels=4)


@dataclass
class Config:
    net: DcanConfig = field(default_factory=DcanConfig)
    train: TrainSchedule = field(default_factory=TrainSchedule)
    train_opts: TrainOptions = field(default_factory=TrainOptions)
    fusion: FusionParams = field(default_factory=FusionParams)
    augment: AugmentSpec = field(default_factory=AugmentSpec)
    scene: GlandSceneSpec = field(default_factory=GlandSceneSpec)
    data: DataOptions = field(default_factory=DataOptions)
    gradcheck: GradcheckOptions = field(default_factory=GradcheckOptions)


# section name in the file -> Config attribute; "train" spans two objects
SECTIONS = {
    "net": ("net",),
    "train": ("train", "train_opts"),
    "fusion": ("fusion",),
    "augment": ("augment",),
    "scene": ("scene",),
    "data": ("data",),
    "gradcheck": ("gradcheck",),
}

_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse_scalar(text: str, kind):
    if kind is bool:
        low = text.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ValueError(f"expected a boolean, got {text!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def _parse_value(text: str, default):
    if isinstance(default, tuple):
        kind = type(default[0]) if default else float
        items = [t.strip() for t in text.split(",") if t.strip()]
        return tuple(_parse_scalar(t, kind) for t in items)
    return _parse_scalar(text, type(default))


def _targets(cfg: Config, section: str, key: str):
    for attr in SECTIONS.get(section, ()):
        obj = getattr(cfg, attr)
        if key in {f.name for f in dataclasses.fields(obj)}:
            return obj
    return None


def parse(text: str, source: str = "<config>") -> Config:
    """Parse config text, then validate every section."""
    cfg = Config()
    seen = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'section.key = value'")
        name, value = (s.strip() for s in line.split("=", 1))
        if "." not in name:
            raise ConfigError(f"{source}:{lineno}: key {name!r} must be written as section.key")
        section, key = name.split(".", 1)
        obj = _targets(cfg, section, key)
        if obj is None:
            raise ConfigError(f"{source}:{lineno}: unknown key {name!r}")
        if name in seen:
            raise ConfigError(f"{source}:{lineno}: {name!r} already set on line {seen[name]}")
        seen[name] = lineno
        try:
            setattr(obj, key, _parse_value(value, getattr(obj, key)))
        except ValueError as exc:
            raise ConfigError(f"{source}:{lineno}: bad value for {name!r}: {exc}") from None
    try:
        validate(cfg)
    except ValueError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return cfg


def validate(cfg: Config) -> Config:
    cfg.net.validate()
    cfg.scene.validate()
    cfg.fusion.__post_init__()
    cfg.augment.__post_init__()
    s = cfg.train
    if s.lr0 < 0 or s.lr_floor < 0 or s.wa0 < 0 or s.wa_floor < 0:
        raise ValueError("learning rates and auxiliary weights must be non-negative")
    if s.lr_drop_factor < 1 or s.wa_drop_factor < 1 or s.wa_interval < 1 or s.lr_window < 1:
        raise ValueError("drop factors must be >= 1 and intervals >= 1")
    if s.max_iters < 0 or cfg.data.n_scenes < 1:
        raise ValueError("max_iters must be >= 0 and data.n_scenes >= 1")
    return cfg


def load(path) -> Config:
    with open(path, encoding="utf-8") as fh:
        return parse(fh.read(), str(path))


def _show(v) -> str:
    if isinstance(v, tuple):
        return ", ".join(str(x) for x in v)
    if isinstance(v, bool):
        return str(v).lower()
    return str(v)


def reference() -> str:
    """Markdown table of every key with its default value."""
    cfg = Config()
    lines = ["# Configuration keys", "", "| key | default |", "|---|---|"]
    for section, attrs in SECTIONS.items():
        for attr in attrs:
            obj = getattr(cfg, attr)
            for f in dataclasses.fields(obj):
                lines.append(f"| `{section}.{f.name}` | `{_show(getattr(obj, f.name))}` |")
    return "\n".join(lines) + "\n"
