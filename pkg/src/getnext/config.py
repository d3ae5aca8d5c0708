"""Training configuration and the flat ``key = value`` config format."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

ABLATIONS = ("no_graph", "no_gcn_use_table", "no_transformer_use_mean",
             "no_time_cat", "no_fusion_concat_only", "single_decoder")


@dataclass
class TrainConfig:
    """Hyper-parameters; defaults are the published full-scale settings."""

    epochs: int = 200
    batch_size: int = 20
    lr: float = 1e-3
    weight_decay: float = 5e-4
    dropout: float = 0.3
    poi_dim: int = 128          # POI and user embedding width
    time_dim: int = 32          # time2vec and category embedding width
    gcn_hidden: tuple[int, ...] = (32, 64, 128)
    tam_dim: int = 128
    encoder_layers: int = 2
    heads: int = 2
    ff_dim: int = 1024
    max_len: int = 512
    time_loss_weight: float = 10.0
    leaky_slope: float = 0.2
    seed: int = 0
    causal_mask: bool = True
    attention_scaling: bool = False
    phi_in_loss: bool = True
    eval_last_only: bool = False
    no_graph: bool = False
    no_gcn_use_table: bool = False
    no_transformer_use_mean: bool = False
    no_time_cat: bool = False
    no_fusion_concat_only: bool = False
    single_decoder: bool = False

    def __post_init__(self):
        self.gcn_hidden = tuple(int(h) for h in self.gcn_hidden)
        positive = ("epochs", "batch_size", "lr", "poi_dim", "time_dim", "tam_dim",
                    "encoder_layers", "heads", "ff_dim", "max_len")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if not self.gcn_hidden or min(self.gcn_hidden) <= 0:
            raise ValueError("gcn_hidden must list positive widths")
        if self.weight_decay < 0 or self.time_loss_weight < 0:
            raise ValueError("weight_decay and time_loss_weight must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")
        if self.model_dim % self.heads:
            raise ValueError(f"model width {self.model_dim} not divisible by {self.heads} heads")

    @property
    def model_dim(self) -> int:
        return 2 * (self.poi_dim + self.time_dim)

    @property
    def uses_graph(self) -> bool:
        return not self.no_graph

    @property
    def uses_gcn(self) -> bool:
        return not (self.no_graph or self.no_gcn_use_table)

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["gcn_hidden"] = list(self.gcn_hidden)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:10]


def parse_value(raw: str, kind) -> Any:
    raw = raw.strip()
    if kind in (bool, "bool"):
        low = raw.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    if kind in (int, "int"):
        return int(raw)
    if kind in (float, "float"):
        return float(raw)
    if kind in ("tuple[int, ...]",):
        return tuple(int(p) for p in raw.replace(",", " ").split())
    return raw


def field_types(cls) -> dict[str, Any]:
    return {f.name: f.type for f in fields(cls)}


def coerce(cls, values: Mapping[str, Any]) -> dict[str, Any]:
    """Convert string values to ``cls`` field types; unknown keys raise KeyError."""
    types = field_types(cls)
    out = {}
    for key, value in values.items():
        if key not in types:
            raise KeyError(f"unknown config key {key!r}")
        out[key] = parse_value(value, types[key]) if isinstance(value, str) else value
    return out


def read_kv(path) -> dict[str, str]:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def write_kv(path, values: Mapping[str, Any]) -> None:
    lines = []
    for key in values:
        v = values[key]
        if isinstance(v, (list, tuple)):
            v = ",".join(str(x) for x in v)
        lines.append(f"{key} = {v}")
    Path(path).write_text("\n".join(lines) + "\n")


def load_train_config(path) -> TrainConfig:
    return TrainConfig(**coerce(TrainConfig, read_kv(path)))
