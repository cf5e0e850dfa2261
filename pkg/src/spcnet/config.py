"""Dataclass configs and the YAML config-file loader.

A config file is plain YAML with one mapping per section::

    model:    {stack_count: 8, joint_count: 16, base_channels: 256, dilation: 2}
    codec:    {input_size: 256, heatmap_size: 64, sigma: 1.0}
    schedule: {base_lr: 1.0e-3, milestones: [120, 150], total_epochs: 170}
    augment:  {rotation: 60, scale_range: [0.75, 1.25], flip_prob: 0.5}
    data:     {train_ann: train.json, val_ann: val.json}
    train:    {seed: 0, out_dir: runs/exp}

Unknown keys are rejected so typos fail loudly.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import yaml


class ConfigError(ValueError):
    """Inconsistent shapes, counts or settings."""


class DataError(ValueError):
    """Malformed annotation or degenerate geometric input."""


# MPII 16-joint order:
# 0 r_ankle, 1 r_knee, 2 r_hip, 3 l_hip, 4 l_knee, 5 l_ankle, 6 pelvis, 7 thorax,
# 8 upper_neck, 9 head_top, 10 r_wrist, 11 r_elbow, 12 r_shoulder,
# 13 l_shoulder, 14 l_elbow, 15 l_wrist
MPII_JOINT_NAMES = (
    "r_ankle", "r_knee", "r_hip", "l_hip", "l_knee", "l_ankle", "pelvis", "thorax",
    "upper_neck", "head_top", "r_wrist", "r_elbow", "r_shoulder", "l_shoulder",
    "l_elbow", "l_wrist",
)
MPII_FLIP_PAIRS = ((0, 5), (1, 4), (2, 3), (10, 15), (11, 14), (12, 13))
# parent of each joint; -1 marks the root (pelvis)
MPII_PARENTS = (1, 2, 6, 6, 3, 4, -1, 6, 7, 8, 11, 12, 7, 7, 13, 14)
MPII_JOINT_GROUPS = {
    "Head": (8, 9),
    "Sho.": (12, 13),
    "Elb.": (11, 14),
    "Wri.": (10, 15),
    "Hip": (2, 3),
    "Knee": (1, 4),
    "Ank.": (0, 5),
}
REPORT_COLUMNS = ("Head", "Sho.", "Elb.", "Wri.", "Hip", "Knee", "Ank.", "Total")
DEFAULT_TEST_SCALES = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2)


@dataclass(frozen=True)
class CodecConfig:
    input_size: int = 256
    heatmap_size: int = 64
    sigma: float = 1.0
    truncate_radius: float = 3.0
    joint_count: int = 16
    subpixel: bool = False

    def __post_init__(self):
        if self.heatmap_size <= 0 or self.input_size % self.heatmap_size:
            raise ConfigError(
                f"input_size {self.input_size} must be a multiple of heatmap_size {self.heatmap_size}"
            )
        if self.sigma <= 0:
            raise ConfigError(f"sigma must be > 0, got {self.sigma}")
        if self.truncate_radius < 1:
            raise ConfigError(f"truncate_radius must be >= 1, got {self.truncate_radius}")
        if self.joint_count < 1:
            raise ConfigError("joint_count must be >= 1")

    @property
    def stride(self) -> int:
        return self.input_size // self.heatmap_size


@dataclass(frozen=True)
class SPCNetConfig:
    stack_count: int = 8
    joint_count: int = 16
    base_channels: int = 256
    dilation: int = 2
    input_size: int = 256
    module_kind: str = "dhm"  # dhm | hourglass
    fusion_kind: str = "sim"  # sim | sum | concat | none
    dilated_block_count: int = 3
    decoder_refine_blocks: int = 1
    hourglass_depth: int = 4
    squeeze_bn_relu: bool = False
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    head_init_scale: float = 1e-3

    def __post_init__(self):
        if self.stack_count < 1 or self.joint_count < 1:
            raise ConfigError("stack_count and joint_count must be >= 1")
        if self.dilation < 1:
            raise ConfigError("dilation must be >= 1")
        if self.module_kind not in ("dhm", "hourglass"):
            raise ConfigError(f"unknown module_kind {self.module_kind!r}")
        if self.fusion_kind not in ("sim", "sum", "concat", "none"):
            raise ConfigError(f"unknown fusion_kind {self.fusion_kind!r}")
        min_res = self.heatmap_size // (2 ** self.downsample_count)
        if self.input_size % 4 or min_res < 1 or self.heatmap_size % (2 ** self.downsample_count):
            raise ConfigError(
                f"input_size {self.input_size} incompatible with {self.downsample_count} downsamplings"
            )

    @property
    def heatmap_size(self) -> int:
        return self.input_size // 4

    @property
    def downsample_count(self) -> int:
        return 2 if self.module_kind == "dhm" else self.hourglass_depth

    def codec(self, **overrides) -> CodecConfig:
        kw = dict(input_size=self.input_size, heatmap_size=self.heatmap_size,
                  joint_count=self.joint_count)
        kw.update(overrides)
        return CodecConfig(**kw)

    def config_hash(self) -> str:
        blob = json.dumps(dataclasses.asdict(self), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class OptimizerSchedule:
    base_lr: float = 1e-3
    milestones: tuple[int, ...] = (120, 150)
    decay_factor: float = 0.1
    total_epochs: int = 170
    batch_size: int = 48
    rms_alpha: float = 0.99
    rms_eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        ms = tuple(int(m) for m in self.milestones)
        object.__setattr__(self, "milestones", ms)
        if any(b <= a for a, b in zip(ms, ms[1:])):
            raise ConfigError(f"milestones must be strictly increasing: {ms}")
        if ms and ms[-1] >= self.total_epochs:
            raise ConfigError(f"milestones must be < total_epochs ({self.total_epochs})")
        if not 0 < self.decay_factor < 1:
            raise ConfigError(f"decay_factor must lie in (0, 1), got {self.decay_factor}")


@dataclass(frozen=True)
class AugmentConfig:
    rotation: float = 60.0
    scale_range: tuple[float, float] = (0.75, 1.25)
    flip_prob: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "scale_range", tuple(float(s) for s in self.scale_range))


@dataclass(frozen=True)
class PCKConfig:
    variant: str = "pckh"  # pckh | pck
    threshold: float | None = None
    head_factor: float = 0.6
    joint_groups: dict = field(default_factory=lambda: dict(MPII_JOINT_GROUPS))

    def __post_init__(self):
        if self.variant not in ("pckh", "pck"):
            raise ConfigError(f"unknown PCK variant {self.variant!r}")
        if self.threshold is None:
            object.__setattr__(self, "threshold", 0.5 if self.variant == "pckh" else 0.2)
        if self.threshold < 0:
            raise ConfigError("threshold must be >= 0")
        seen: set[int] = set()
        for name, idx in self.joint_groups.items():
            for j in idx:
                if j in seen:
                    raise ConfigError(f"joint {j} appears in more than one group ({name})")
                seen.add(j)

    def with_threshold(self, t: float) -> "PCKConfig":
        return dataclasses.replace(self, threshold=t)

    @classmethod
    def parse(cls, spec: str, **kw) -> "PCKConfig":
        """Parse ``pckh@0.5`` / ``pck@0.2`` style metric names."""
        name, _, thr = spec.lower().partition("@")
        return cls(variant=name, threshold=float(thr) if thr else None, **kw)


@dataclass(frozen=True)
class DataConfig:
    train_ann: str | None = None
    val_ann: str | None = None
    image_root: str | None = None
    mean: tuple[float, float, float] = (0.485, 0.456, 0.406)
    std: tuple[float, float, float] = (0.229, 0.224, 0.225)
    supervise_occluded: bool = True
    flip_pairs: tuple[tuple[int, int], ...] = MPII_FLIP_PAIRS

    def __post_init__(self):
        object.__setattr__(self, "flip_pairs", tuple(tuple(p) for p in self.flip_pairs))
        object.__setattr__(self, "mean", tuple(self.mean))
        object.__setattr__(self, "std", tuple(self.std))


@dataclass(frozen=True)
class TrainConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    augment: bool = True
    eval_every: int = 1
    log_every: int = 10
    metric: str = "pckh@0.5"
    device: str = "cpu"


@dataclass(frozen=True)
class ExperimentConfig:
    model: SPCNetConfig = field(default_factory=SPCNetConfig)
    codec: CodecConfig | None = None
    schedule: OptimizerSchedule = field(default_factory=OptimizerSchedule)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    data: DataConfig = field(default_factory=DataConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if self.codec is None:
            object.__setattr__(self, "codec", self.model.codec())
        elif (self.codec.input_size, self.codec.heatmap_size, self.codec.joint_count) != (
            self.model.input_size, self.model.heatmap_size, self.model.joint_count
        ):
            raise ConfigError("codec sizes/joint_count disagree with model config")


_SECTIONS = {
    "model": SPCNetConfig,
    "codec": CodecConfig,
    "schedule": OptimizerSchedule,
    "augment": AugmentConfig,
    "data": DataConfig,
    "train": TrainConfig,
}


def _build(cls, raw: dict[str, Any], section: str):
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(raw) - names
    if unknown:
        raise ConfigError(f"unknown keys in [{section}]: {sorted(unknown)}")
    return cls(**raw)


def experiment_from_dict(raw: dict[str, Any]) -> ExperimentConfig:
    unknown = set(raw) - set(_SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    kw = {}
    model = _build(SPCNetConfig, raw.get("model") or {}, "model")
    kw["model"] = model
    if raw.get("codec"):
        codec_kw = dict(input_size=model.input_size, heatmap_size=model.heatmap_size,
                        joint_count=model.joint_count)
        codec_kw.update(raw["codec"])
        kw["codec"] = _build(CodecConfig, codec_kw, "codec")
    for name in ("schedule", "augment", "data", "train"):
        if raw.get(name):
            kw[name] = _build(_SECTIONS[name], raw[name], name)
    return ExperimentConfig(**kw)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config not found: {path}")
    raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    return experiment_from_dict(raw)


def experiment_to_dict(cfg: ExperimentConfig) -> dict[str, Any]:
    out = dataclasses.asdict(cfg)

    def _plain(v):
        if isinstance(v, (tuple, list)):
            return [_plain(x) for x in v]
        if isinstance(v, dict):
            return {k: _plain(x) for k, x in v.items()}
        return v

    return _plain(out)
