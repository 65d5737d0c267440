"""Flat ``key = value`` run configuration."""

from __future__ import annotations

from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .model import Architecture
from .power import EnergyModel
from .snn import LifParams
from .training import TrainConfig


@dataclass(frozen=True)
class RunConfig:
    fs: int = 16000
    frame: int = 480
    hop: int = 240
    n_filters: int = 20
    kernel_len: int = 101
    conv_kernel: int = 3
    variant: str = "svad"
    no_sconv: bool = False
    no_attention: bool = False
    alpha: float = 0.5
    theta: float = 0.3
    a: float = 4.0
    lam: float = 1.0
    epochs: int = 100
    batch_size: int = 128
    lr0: float = 0.001
    lr_decay: float = 0.1
    lr_decay_every: int = 40
    clip_norm: float = 5.0
    seed: int = 0
    val_fraction: float = 0.1
    e_syn_pj: float = 23.6
    e_upd_pj: float = 81.0

    def __post_init__(self):
        if (self.fs, self.frame, self.hop) != (16000, 480, 240):
            raise ConfigError("only fs = 16000, frame = 480, hop = 240 are supported")
        if not 0 <= self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in [0, 1)")
        try:
            self.arch()
            self.lif()
            self.train_config()
            self.energy_model()
        except ValueError as e:
            raise ConfigError(str(e)) from e

    def arch(self) -> Architecture:
        base = Architecture.from_variant(self.variant, self.no_sconv, self.no_attention)
        return Architecture(**{**base.to_dict(), "n_filters": self.n_filters,
                               "kernel_len": self.kernel_len, "conv_kernel": self.conv_kernel,
                               "fs": self.fs})

    def lif(self) -> LifParams:
        return LifParams(self.alpha, self.theta, self.a)

    def train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.lr0, self.lr_decay,
                           self.lr_decay_every, self.lam, self.clip_norm, self.seed)

    def energy_model(self) -> EnergyModel:
        return EnergyModel.from_pj(self.e_syn_pj, self.e_upd_pj,
                                   "loihi" if (self.e_syn_pj, self.e_upd_pj) == (23.6, 81.0) else "custom")


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from None


def parse_config(text: str, **overrides) -> RunConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        values[key] = _convert(key, raw)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def load_config(path, **overrides) -> RunConfig:
    return parse_config(Path(path).read_text(), **overrides)


def dump_config(cfg: RunConfig) -> str:
    out = []
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        out.append(f"{f.name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(out) + "\n"
