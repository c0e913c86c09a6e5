"""Training configuration, flat ``key=value`` config files and fingerprints."""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, fields
from pathlib import Path

from .layers import ConfigError
from .mixer import AGGREGATIONS, MIXINGS


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 64
    hidden: int = 128
    heads: int = 8
    encoder_layers: int = 2
    proximity_layers: int = 1
    topk: int = 10
    glimpses: int = 1
    prev_skew: int = 1
    ffn_mult: int = 4
    leaky_slope: float = 0.01
    epochs: int = 10
    seed: int = 0
    ablation: str = "none"
    aggregation: str = "sum"
    mixing: str = "sum"
    mixer_seed: int = 0
    mean_denominator: str = "nodes"
    norm_axis: str = "feature"
    clip_norm: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        for name in ("batch_size", "hidden", "heads", "encoder_layers", "proximity_layers",
                     "topk", "epochs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.glimpses < 0:
            raise ConfigError("glimpses must be >= 0")
        if self.prev_skew not in (0, 1):
            raise ConfigError("prev_skew must be 0 or 1")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.hidden % self.heads:
            raise ConfigError(f"heads ({self.heads}) must divide hidden ({self.hidden})")
        choices = {
            "ablation": ("none", "opapn"), "aggregation": AGGREGATIONS, "mixing": MIXINGS,
            "mean_denominator": ("nodes", "hidden"), "norm_axis": ("feature", "batch"),
        }
        for name, allowed in choices.items():
            if getattr(self, name) not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {getattr(self, name)!r}")

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    def canonical(self) -> str:
        return "\n".join(f"{f.name}={getattr(self, f.name)!r}" for f in fields(self))

    def fingerprint(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def coerce(key: str, raw: str):
    if key not in _TYPES:
        raise ConfigError(f"unknown config key {key!r}")
    kind = _TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {kind}") from None
    return raw.strip().strip("'\"")


def parse_config_text(text: str) -> dict:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key=value, got {line!r}")
        key, val = (part.strip() for part in line.split("=", 1))
        out[key] = coerce(key, val)
    return out


def load_config(path: str | Path | None = None, **overrides) -> TrainConfig:
    """File values first, then non-None ``overrides`` (CLI flags win)."""
    values = parse_config_text(Path(path).read_text()) if path else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return TrainConfig(**values)


def from_dict(d: dict) -> TrainConfig:
    return TrainConfig(**{k: v for k, v in d.items() if k in _TYPES})
