"""Selective Information Module: cross-stack collection and per-pixel softmax fusion."""
from __future__ import annotations

from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError
from .dhm import MultiLevelFeatures

LEVELS = 4


def fusion_weights(m: torch.Tensor) -> torch.Tensor:
    """Softmax over the level axis (dim 1 of ``(B, 4, H, W)``, or dim 0 of ``(4, H, W)``).

    The per-pixel max is subtracted first; this does not change the result.
    """
    if not torch.isfinite(m).all():
        raise FloatingPointError("squeeze map contains non-finite values")
    dim = 0 if m.dim() == 3 else 1
    if m.shape[dim] != LEVELS:
        raise ConfigError(f"squeeze map must have {LEVELS} channels, got {m.shape[dim]}")
    shifted = m - m.amax(dim=dim, keepdim=True)
    e = shifted.exp()
    return e / e.sum(dim=dim, keepdim=True)


def weighted_sum(xs: Sequence[torch.Tensor], a: torch.Tensor) -> torch.Tensor:
    """``F = sum_n A_n * X_n`` with ``A_n`` broadcast over channels."""
    return sum(a[:, n : n + 1] * x for n, x in enumerate(xs))


class InformationCollection(nn.Module):
    """Concatenate same-level features over stacks, squeeze to C channels, upsample."""

    def __init__(self, channels: int, stack_count: int, bn_momentum=0.1, bn_eps=1e-5):
        super().__init__()
        self.channels, self.stack_count = channels, stack_count
        self.reduce = nn.ModuleList(
            nn.Sequential(
                nn.Conv2d(channels * stack_count, channels, 1, bias=False),
                nn.BatchNorm2d(channels, momentum=bn_momentum, eps=bn_eps),
                nn.ReLU(inplace=True),
            )
            for _ in range(LEVELS)
        )

    def forward(self, stack_features: Sequence[MultiLevelFeatures]) -> list[torch.Tensor]:
        if len(stack_features) != self.stack_count:
            raise ConfigError(f"expected {self.stack_count} feature sets, got {len(stack_features)}")
        out_size = stack_features[0][-1].shape[-2:]
        xs = []
        for level in range(LEVELS):
            feats = [fs[level] for fs in stack_features]
            shape = feats[0].shape
            if any(f.shape != shape for f in feats) or shape[1] != self.channels:
                raise ConfigError(f"inconsistent level-{level + 1} feature shapes across stacks")
            x = self.reduce[level](torch.cat(feats, dim=1))
            xs.append(F.interpolate(x, size=out_size, mode="nearest"))
        return xs


def _check_levels(xs: Sequence[torch.Tensor]):
    if len(xs) != LEVELS:
        raise ConfigError(f"expected {LEVELS} collected features, got {len(xs)}")
    if any(x.shape != xs[0].shape for x in xs):
        raise ConfigError("collected features differ in shape")


class InformationDistribution(nn.Module):
    """Element-wise sum -> 1x1 squeeze to 4 maps -> softmax -> weighted sum.

    ``forward`` returns ``(F, A)``; ``A`` is kept for diagnostics.
    """

    def __init__(self, channels: int, bn_relu: bool = False):
        super().__init__()
        self.squeeze = nn.Conv2d(channels, LEVELS, 1, bias=True)
        self.post = (
            nn.Sequential(nn.BatchNorm2d(LEVELS), nn.ReLU()) if bn_relu else nn.Identity()
        )

    def forward(self, xs: Sequence[torch.Tensor]):
        _check_levels(xs)
        s = xs[0] + xs[1] + xs[2] + xs[3]
        a = fusion_weights(self.post(self.squeeze(s)))
        return weighted_sum(xs, a), a


class SumFusion(nn.Module):
    def forward(self, xs):
        _check_levels(xs)
        return xs[0] + xs[1] + xs[2] + xs[3], None


class ConcatFusion(nn.Module):
    def __init__(self, channels: int):
        super().__init__()
        self.proj = nn.Conv2d(channels * LEVELS, channels, 1)

    def forward(self, xs):
        _check_levels(xs)
        return self.proj(torch.cat(list(xs), dim=1)), None


def build_fuser(kind: str, channels: int, bn_relu: bool = False) -> nn.Module:
    if kind == "sim":
        return InformationDistribution(channels, bn_relu)
    if kind == "sum":
        return SumFusion()
    if kind == "concat":
        return ConcatFusion(channels)
    raise ConfigError(f"unknown fusion kind {kind!r}")


def save_weight_maps(a: torch.Tensor | np.ndarray, out_dir: str | Path, prefix: str = "fusion") -> list[Path]:
    """Write each level's weight map as an 8-bit grayscale PNG (0 -> black, 1 -> white)."""
    from PIL import Image

    a = np.asarray(a.detach().cpu() if isinstance(a, torch.Tensor) else a)
    if a.ndim == 4:
        a = a[0]
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for n, level in enumerate(a):
        p = out_dir / f"{prefix}_A{n + 1}.png"
        Image.fromarray(np.clip(np.rint(level * 255), 0, 255).astype(np.uint8), mode="L").save(p)
        paths.append(p)
    return paths
