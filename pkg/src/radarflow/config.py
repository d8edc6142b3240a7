"""Dataclass configs, YAML round-tripping, and config fingerprints."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import yaml


@dataclass
class FcmConfig:
    enabled: bool = True
    reference_level: int = 2      # 1-based pyramid level used as the common resolution
    gamma_init: float = 0.0


@dataclass
class CgstfConfig:
    enabled: bool = True
    stages: tuple = (1, 2, 3)     # encoder stages that align-and-fuse (1-based)
    alpha_mode: str = "pixel"     # "pixel": bound = one pixel in grid units; "fixed": alpha_fixed
    alpha_fixed: float = 0.1


@dataclass
class WgscConfig:
    enabled: bool = True
    skip_levels: tuple = (2, 3)   # the two deepest of the three skip connections
    wavelet: str = "db4"          # only db4 is supported; validated at model build


@dataclass
class VrwkvConfig:
    enabled: bool = True
    stages: tuple = ("encoder_tail", "bottleneck", "decoder_first")
    blocks_per_stage: int = 1
    compression: int = 4          # channel compression ratio inside r/k/v projections
    shift_pixels: int = 1
    normalize_distance: bool = False  # divide the decay distance by token count


@dataclass
class ModelConfig:
    levels: int = 4
    base_width: int = 32
    width_multiplier: float = 1.0
    j: int = 5                    # conditioning frames
    k: int = 20                   # forecast frames
    kan_mode: str = "spline"      # "spline" | "feed_forward"
    time_embed_dim: int = 64
    time_conditioning: bool = True
    cond_inject: str = "additive"  # decoder levels without gated skips: "additive" | "concat"
    fcm: FcmConfig = field(default_factory=FcmConfig)
    cgstf: CgstfConfig = field(default_factory=CgstfConfig)
    wgsc: WgscConfig = field(default_factory=WgscConfig)
    vrwkv: VrwkvConfig = field(default_factory=VrwkvConfig)

    def widths(self) -> tuple:
        """Per-level channel widths, rounded to multiples of 4 for the token mixer."""
        ws = []
        for i in range(self.levels):
            w = self.base_width * (2 ** i) * self.width_multiplier
            ws.append(max(4, int(round(w / 4)) * 4))
        return tuple(ws)

    def validate(self) -> None:
        if self.levels < 2:
            raise ValueError("need at least 2 pyramid levels")
        if any(w <= 0 for w in self.widths()):
            raise ValueError("channel widths must be positive")
        if self.kan_mode not in ("spline", "feed_forward"):
            raise ValueError(f"unknown kan_mode {self.kan_mode!r}")
        if self.cond_inject not in ("additive", "concat"):
            raise ValueError(f"unknown cond_inject {self.cond_inject!r}")
        if self.wgsc.wavelet != "db4":
            raise ValueError("only the db4 wavelet is supported")
        if not (1 <= self.fcm.reference_level <= self.levels):
            raise ValueError("fcm.reference_level out of range")


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8
    epochs: int = 500
    steps_per_epoch: int = 0      # 0: one pass over the train manifest per epoch
    ema_decay: float = 0.95
    seed: int = 0
    weight_decay: float = 1e-2
    grad_clip: float = 1.0
    sample_steps: int = 5
    val_noise_seed: int = 1234

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not (0.0 < self.ema_decay < 1.0):
            raise ValueError("ema_decay must lie in (0, 1)")
        if self.batch_size < 1 or self.epochs < 1:
            raise ValueError("batch_size and epochs must be >= 1")


@dataclass
class DataConfig:
    stride: int = 1
    fractions: tuple = (0.7, 0.1, 0.2)
    resize_to: tuple = ()         # empty: keep native resolution; else (H, W)
    thresholds: str = "sevir"     # preset name or "custom:v1,v2,..." in native units


@dataclass
class ExperimentConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def validate(self) -> None:
        self.model.validate()
        self.train.validate()


def _as_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _as_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, (list, tuple)):
        return [_as_plain(v) for v in obj]
    return obj


_NESTED = {
    "fcm": FcmConfig,
    "cgstf": CgstfConfig,
    "wgsc": WgscConfig,
    "vrwkv": VrwkvConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataConfig,
}


def _from_plain(cls, data):
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name not in data:
            continue
        v = data[f.name]
        if f.name in _NESTED and isinstance(v, dict):
            kwargs[f.name] = _from_plain(_NESTED[f.name], v)
        elif isinstance(v, list):
            kwargs[f.name] = tuple(v)
        else:
            kwargs[f.name] = v
    return cls(**kwargs)


def to_dict(cfg: ExperimentConfig) -> dict:
    return _as_plain(cfg)


def from_dict(data: dict) -> ExperimentConfig:
    return _from_plain(ExperimentConfig, data)


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(to_dict(cfg), sort_keys=True))


def load_config(path) -> ExperimentConfig:
    data = yaml.safe_load(Path(path).read_text())
    cfg = from_dict(data or {})
    cfg.validate()
    return cfg


def fingerprint(cfg: ExperimentConfig) -> str:
    """Stable hash of the fully resolved config; embedded in checkpoints."""
    blob = json.dumps(to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
