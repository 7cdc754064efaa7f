"""Training configuration and the flat ``key=value`` config file format."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from typing import Iterable, Mapping

from .relation import RelationMode, RelationParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    relation_mode: str = "dot"
    n_graphs: int = 1
    gcn_layers: int = 1
    hidden_dim: int = 0  # 0: same as the dataset feature dimension
    d_k: int = 256
    d_s: int = 32  # accepted for completeness; no computation uses it
    mu_fraction: float = 0.2
    mu_pixels: float = 0.0  # > 0 overrides mu_fraction
    same_frame_only: bool = False
    ncc_centered: bool = True
    action_loss_weight: float = 1.0
    batch_size: int = 16
    lr: float = 1e-4
    epochs: int = 100
    optimizer: str = "sgd"
    seed: int = 0
    frame_dropout: float = 0.0
    stage: int = 1
    stage1_frame_sample: bool = True
    stage2_from_scratch: bool = False

    def __post_init__(self):
        try:
            RelationMode.parse(self.relation_mode)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        positive = dict(n_graphs=self.n_graphs, gcn_layers=self.gcn_layers, d_k=self.d_k,
                        d_s=self.d_s, batch_size=self.batch_size)
        for k, v in positive.items():
            if v < 1:
                raise ConfigError(f"{k} must be >= 1, got {v}")
        if self.hidden_dim < 0:
            raise ConfigError("hidden_dim must be >= 0")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.lr < 0:
            raise ConfigError("lr must be >= 0")
        if self.action_loss_weight < 0:
            raise ConfigError("action_loss_weight must be >= 0")
        if self.mu_pixels < 0 or (self.mu_pixels == 0 and not 0 < self.mu_fraction <= 1):
            raise ConfigError("need mu_pixels > 0 or mu_fraction in (0, 1]")
        if not 0 <= self.frame_dropout <= 1:
            raise ConfigError("frame_dropout must lie in [0, 1]")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"optimizer must be sgd or adam, got {self.optimizer!r}")
        if self.stage not in (1, 2):
            raise ConfigError(f"stage must be 1 or 2, got {self.stage}")

    @property
    def mode(self) -> RelationMode:
        return RelationMode.parse(self.relation_mode)

    def relation_params(self, **weights) -> RelationParams:
        mu = dict(mu_pixels=self.mu_pixels, mu_fraction=None) if self.mu_pixels > 0 else \
            dict(mu_fraction=self.mu_fraction)
        return RelationParams(d_k=self.d_k, same_frame_only=self.same_frame_only,
                              ncc_centered=self.ncc_centered, **mu, **weights)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def items(self) -> list[tuple[str, str]]:
        return [(f.name, _format(getattr(self, f.name))) for f in fields(self)]

    def to_text(self) -> str:
        return "".join(f"{k}={v}\n" for k, v in self.items())


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(name: str, typ: str, raw: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        return raw
    except ValueError:
        raise ConfigError(f"bad value {raw!r} for {name} ({typ})") from None


def parse_overrides(pairs: Iterable[str]) -> dict[str, str]:
    out = {}
    for p in pairs:
        if "=" not in p:
            raise ConfigError(f"expected key=value, got {p!r}")
        k, v = p.split("=", 1)
        out[k.strip()] = v
    return out


def parse_config_text(text: str) -> dict[str, str]:
    lines = []
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            lines.append(line)
    return parse_overrides(lines)


def build_dataclass(cls, values: Mapping[str, str], base=None):
    """Apply string ``values`` to a dataclass instance; unknown keys are rejected."""
    base = cls() if base is None else base
    types = {f.name: f.type for f in fields(cls)}
    unknown = sorted(set(values) - set(types))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    changes = {k: _coerce(k, types[k], v) for k, v in values.items()}
    return dataclasses.replace(base, **changes)


def build_config(values: Mapping[str, str], base: TrainConfig | None = None) -> TrainConfig:
    return build_dataclass(TrainConfig, values, base)
