"""Flat ``key = value`` run configuration."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

from .errors import ConfigError

VOC_STRUCTURES = ("none", "encoder_only", "decoder_only", "both")
FUSION_STRATEGIES = ("none", "v2l", "l2v", "both")
OPTIMIZERS = ("adam", "adamw", "rmsprop")
AUGMENTATIONS = ("none", "flip")

# Full-scale training recipe; desk runs keep the dataclass defaults.
FULL_SCALE_PRESET = {"optimizer": "adamw", "lr": 1e-4, "weight_decay": 1e-4}


@dataclass
class Config:
    # model widths
    d_model: int = 64
    text_dim: int = 64
    heads: int = 4
    num_queries: int = 20
    num_encoder_layers: int = 3
    num_decoder_layers: int = 3
    num_voc_layers: int = 3
    text_layers: int = 2
    voc_structure: str = "both"
    fusion_strategy: str = "both"
    num_classes: int = 0
    # clip geometry
    num_frames: int = 8
    height: int = 64
    width: int = 64
    # loss weights
    lambda_cls: float = 2.0
    lambda_l1: float = 2.0
    lambda_giou: float = 2.0
    lambda_dice: float = 2.0
    lambda_focal: float = 5.0
    lambda_con: float = 1.0
    focal_alpha: float = 0.25
    focal_gamma: float = 2.0
    # optimisation
    optimizer: str = "adam"
    lr: float = 3e-4
    weight_decay: float = 0.0
    clip_grad_norm: float = 1.0
    epochs: int = 10
    seed: int = 0
    augment: str = "none"
    # data
    n_train: int = 200
    n_val: int = 50
    temporal_fraction: float = 1.0
    num_shapes: int = 3
    data_dir: str = "data"
    out_dir: str = "runs"
    preset: str = "desk"
    extra: dict = field(default_factory=dict, repr=False)

    def validate(self) -> "Config":
        if self.voc_structure not in VOC_STRUCTURES:
            raise ConfigError(f"voc_structure must be one of {VOC_STRUCTURES}, got {self.voc_structure!r}")
        if self.fusion_strategy not in FUSION_STRATEGIES:
            raise ConfigError(f"fusion_strategy must be one of {FUSION_STRATEGIES}, got {self.fusion_strategy!r}")
        if self.optimizer not in OPTIMIZERS:
            raise ConfigError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.augment not in AUGMENTATIONS:
            raise ConfigError(f"augment must be one of {AUGMENTATIONS}, got {self.augment!r}")
        if self.d_model % self.heads or self.text_dim % self.heads:
            raise ConfigError(f"d_model/text_dim must be divisible by heads={self.heads}")
        if self.height % 16 or self.width % 16:
            raise ConfigError(f"frame size {self.height}x{self.width} must be divisible by 16")
        for name in ("num_queries", "num_frames", "epochs", "n_train", "n_val", "num_shapes"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("lambda_cls", "lambda_l1", "lambda_giou", "lambda_dice", "lambda_focal", "lambda_con"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not 0.0 <= self.temporal_fraction <= 1.0:
            raise ConfigError("temporal_fraction must lie in [0, 1]")
        if self.num_shapes < 2 and self.temporal_fraction > 0:
            raise ConfigError("temporal samples need num_shapes >= 2 (target plus distractor)")
        return self

    def replace(self, **kw) -> "Config":
        return dataclasses.replace(self, **kw).validate()

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name == "extra":
                continue
            lines.append(f"{f.name} = {getattr(self, f.name)}")
        return "\n".join(lines) + "\n"

    @property
    def loss_weights(self):
        from .losses import LossWeights
        return LossWeights(self.lambda_cls, self.lambda_l1, self.lambda_giou,
                           self.lambda_dice, self.lambda_focal, self.lambda_con)


_FIELD_TYPES = {f.name: f.type for f in fields(Config) if f.name != "extra"}


def _coerce(key: str, raw: str):
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {kind}") from exc
    return raw


def parse_overrides(pairs: dict[str, str]) -> dict:
    out = {}
    for key, raw in pairs.items():
        if key not in _FIELD_TYPES:
            raise ConfigError(f"unknown config key: {key}")
        out[key] = _coerce(key, raw)
    return out


def from_dict(pairs: dict[str, str]) -> Config:
    values = parse_overrides(pairs)
    base = {}
    if values.get("preset", "desk") == "full_scale":
        base.update(FULL_SCALE_PRESET)
    elif values.get("preset", "desk") != "desk":
        raise ConfigError(f"preset must be 'desk' or 'full_scale', got {values['preset']!r}")
    base.update(values)
    return Config(**base).validate()


def read_pairs(text: str) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {n}: expected key = value, got {line!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        pairs[key] = val
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> Config:
    pairs = read_pairs(Path(path).read_text()) if path else {}
    pairs.update(overrides or {})
    return from_dict(pairs)
