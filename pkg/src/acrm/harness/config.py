"""Model/training configuration."""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from ..interaction import InteractionConfig

VARIANTS = {
    "dt": ("mul", "tanh"),
    "dg": ("mul", "gauss"),
    "st": ("sub", "tanh"),
    "sg": ("sub", "gauss"),
}


@dataclass(frozen=True)
class ModelConfig:
    d: int = 256
    d_a: int | None = None
    predictor_hidden: int = 256
    embed_dim: int = 300
    normalization: str = "tanh"
    interaction: str = "mul"
    attention: bool = True
    tied_lstm: bool = False
    strict_mean: bool = False
    lam: float = 0.7
    lr: float = 0.001
    batch_size: int = 64
    dropout: float = 0.5
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0
    iou_thresholds: tuple[float, ...] = (0.3, 0.5, 0.7)
    topk: tuple[int, ...] = (1,)

    def __post_init__(self):
        InteractionConfig(self.normalization, self.interaction)
        if self.d < 2 or self.d % 2:
            raise ValueError(f"d must be a positive even number, got {self.d}")
        if self.lam < 0:
            raise ValueError("lam must be non-negative")
        if not 0 <= self.dropout < 1:
            raise ValueError("dropout must be in [0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 0:
            raise ValueError("batch_size/max_epochs must be >= 1 and patience >= 0")
        object.__setattr__(self, "iou_thresholds", tuple(float(m) for m in self.iou_thresholds))
        object.__setattr__(self, "topk", tuple(int(n) for n in self.topk))

    @property
    def interaction_config(self) -> InteractionConfig:
        return InteractionConfig(self.normalization, self.interaction)

    @property
    def attention_width(self) -> int:
        return self.d if self.d_a is None else self.d_a

    @classmethod
    def for_variant(cls, variant: str, **overrides) -> "ModelConfig":
        kind, norm = VARIANTS[variant]
        return cls(interaction=kind, normalization=norm, **overrides)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["iou_thresholds"] = list(self.iou_thresholds)
        out["topk"] = list(self.topk)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        for key in ("iou_thresholds", "topk"):
            if key in data:
                data[key] = tuple(data[key])
        return cls(**data)

    def override(self, **changes) -> "ModelConfig":
        return replace(self, **{k: v for k, v in changes.items() if v is not None})


def load_config(path: str | Path | None, **overrides) -> ModelConfig:
    """Read a JSON config, apply non-None overrides, then ``ACRM_SEED``."""
    cfg = ModelConfig() if path is None else ModelConfig.from_dict(json.loads(Path(path).read_text()))
    cfg = cfg.override(**overrides)
    if os.environ.get("ACRM_SEED"):
        cfg = cfg.override(seed=int(os.environ["ACRM_SEED"]))
    return cfg
