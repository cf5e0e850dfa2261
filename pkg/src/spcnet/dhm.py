"""Dilated Hourglass Module and its residual bottlenecks.

The encoder downsamples twice (64 -> 32 -> 16 for a 256 input); the deep
stage is a chain of dilated bottlenecks that keeps the 16x16 resolution and
grows the receptive field instead of pooling further.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError


def effective_extent(kernel_size: int, dilation: int) -> int:
    """Spatial extent covered by a dilated kernel, ``K + (K-1)(R-1)``."""
    if kernel_size < 1 or kernel_size % 2 == 0:
        raise ConfigError(f"kernel size must be odd, got {kernel_size}")
    if dilation < 1:
        raise ConfigError(f"dilation must be >= 1, got {dilation}")
    return kernel_size + (kernel_size - 1) * (dilation - 1)


def same_padding(kernel_size: int, dilation: int) -> int:
    return dilation * (kernel_size - 1) // 2


@dataclass
class DilatedConvSpec:
    weight: np.ndarray | torch.Tensor  # (out, in, K, K)
    dilation: int = 1
    bias: np.ndarray | torch.Tensor | None = None
    padding: int | None = None  # None -> same-size padding

    @property
    def kernel_size(self) -> int:
        return int(self.weight.shape[-1])

    @property
    def in_channels(self) -> int:
        return int(self.weight.shape[1])

    @property
    def out_channels(self) -> int:
        return int(self.weight.shape[0])


def dilated_conv2d(x, spec: DilatedConvSpec):
    """Zero-padded dilated cross-correlation.

    ``out[c, i, j] = sum_{m, n, k} x[k, i + R*m - pad, j + R*n - pad] * W[c, k, m, n] (+ b[c])``

    Accepts ``(C, H, W)`` or ``(B, C, H, W)``, as numpy arrays or tensors, and
    returns the same kind.
    """
    as_numpy = isinstance(x, np.ndarray)
    t = torch.as_tensor(x)
    w = torch.as_tensor(spec.weight, dtype=t.dtype)
    b = None if spec.bias is None else torch.as_tensor(spec.bias, dtype=t.dtype)
    squeeze = t.dim() == 3
    if squeeze:
        t = t.unsqueeze(0)
    if t.shape[1] != spec.in_channels:
        raise ConfigError(f"input has {t.shape[1]} channels, kernel expects {spec.in_channels}")
    pad = same_padding(spec.kernel_size, spec.dilation) if spec.padding is None else spec.padding
    extent = effective_extent(spec.kernel_size, spec.dilation)
    if min(t.shape[-2:]) + 2 * pad < extent:
        raise ConfigError(f"input {tuple(t.shape[-2:])} smaller than kernel extent {extent}")
    out = F.conv2d(t, w, b, padding=pad, dilation=spec.dilation)
    if squeeze:
        out = out.squeeze(0)
    return out.numpy() if as_numpy else out


BOTTLENECK_KINDS = ("conventional", "dilated_a", "dilated_b")


class Bottleneck(nn.Module):
    """1x1 reduce -> 3x3 (optionally dilated) -> 1x1 expand, plus skip.

    ``dilated_a`` always carries a 1x1 projection skip (it opens a dilated
    stage); ``dilated_b`` and ``conventional`` use identity when channel
    counts allow.
    """

    def __init__(self, in_ch, out_ch, kind="conventional", dilation=1, mid_ch=None,
                 bn_momentum=0.1, bn_eps=1e-5):
        super().__init__()
        if kind not in BOTTLENECK_KINDS:
            raise ConfigError(f"unknown bottleneck kind {kind!r}")
        if kind == "conventional":
            dilation = 1
        self.kind = kind
        self.in_ch, self.out_ch, self.dilation = in_ch, out_ch, dilation
        mid = mid_ch or max(out_ch // 2, 1)
        bn = lambda c: nn.BatchNorm2d(c, momentum=bn_momentum, eps=bn_eps)  # noqa: E731
        self.conv1 = nn.Conv2d(in_ch, mid, 1, bias=False)
        self.bn1 = bn(mid)
        self.conv2 = nn.Conv2d(mid, mid, 3, padding=same_padding(3, dilation),
                               dilation=dilation, bias=False)
        self.bn2 = bn(mid)
        self.conv3 = nn.Conv2d(mid, out_ch, 1, bias=False)
        self.bn3 = bn(out_ch)
        if kind == "dilated_a" or in_ch != out_ch:
            self.skip = nn.Sequential(nn.Conv2d(in_ch, out_ch, 1, bias=False), bn(out_ch))
        else:
            self.skip = nn.Identity()

    def forward(self, x):
        if x.shape[1] != self.in_ch:
            raise ConfigError(f"bottleneck expects {self.in_ch} channels, got {x.shape[1]}")
        out = F.relu(self.bn1(self.conv1(x)))
        out = F.relu(self.bn2(self.conv2(out)))
        out = self.bn3(self.conv3(out))
        return F.relu(out + self.skip(x))


class MultiLevelFeatures(NamedTuple):
    """Decoder features of one module, coarsest first (16, 16, 32, 64 px at 256 input)."""

    d1: torch.Tensor
    d2: torch.Tensor
    d3: torch.Tensor
    d4: torch.Tensor


@dataclass(frozen=True)
class DHMConfig:
    channels: int = 256
    input_resolution: int = 64
    dilation: int = 2
    dilated_block_count: int = 3
    decoder_refine_blocks: int = 1
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5

    downsample_count = 2

    @property
    def min_resolution(self) -> int:
        return self.input_resolution // 2**self.downsample_count


def _upsample(x, like):
    return F.interpolate(x, size=like.shape[-2:], mode="nearest")


class DilatedHourglass(nn.Module):
    """Two-downsample hourglass with a dilated 16x16 deep stage.

    Returns ``(MultiLevelFeatures, out)`` where ``out`` is ``d4``.
    """

    def __init__(self, cfg: DHMConfig):
        super().__init__()
        self.cfg = cfg
        c = cfg.channels
        kw = dict(bn_momentum=cfg.bn_momentum, bn_eps=cfg.bn_eps)
        self.enc64 = Bottleneck(c, c, **kw)
        self.enc32 = Bottleneck(c, c, **kw)
        chain = [
            Bottleneck(c, c, "dilated_a" if i % 2 == 0 else "dilated_b", cfg.dilation, **kw)
            for i in range(cfg.dilated_block_count)
        ]
        self.dilated = nn.Sequential(*chain)

        def refine():
            return nn.Sequential(*[Bottleneck(c, c, **kw) for _ in range(cfg.decoder_refine_blocks)])

        self.dec16 = refine()
        self.dec32 = refine()
        self.dec64 = refine()

    def forward(self, x):
        c = self.cfg.channels
        if x.dim() != 4 or x.shape[1] != c or x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ConfigError(f"DHM expects (B, {c}, H, W) with H, W divisible by 4, got {tuple(x.shape)}")
        e64 = self.enc64(x)
        e32 = self.enc32(F.max_pool2d(e64, 2))
        d1 = self.dilated(F.max_pool2d(e32, 2))
        d2 = self.dec16(d1)
        d3 = self.dec32(_upsample(d2, e32) + e32)
        d4 = self.dec64(_upsample(d3, e64) + e64)
        return MultiLevelFeatures(d1, d2, d3, d4), d4


class ConventionalHourglass(nn.Module):
    """Recursive hourglass with ``depth`` max-pool downsamplings (ablation baseline).

    Its four reported levels are the last four decoder outputs, i.e. at
    1/8, 1/4, 1/2 and full module resolution for depth 4.
    """

    def __init__(self, channels: int, depth: int = 4, bn_momentum=0.1, bn_eps=1e-5):
        super().__init__()
        kw = dict(bn_momentum=bn_momentum, bn_eps=bn_eps)
        self.depth = depth
        self.up = nn.ModuleList(Bottleneck(channels, channels, **kw) for _ in range(depth))
        self.low1 = nn.ModuleList(Bottleneck(channels, channels, **kw) for _ in range(depth))
        self.low3 = nn.ModuleList(Bottleneck(channels, channels, **kw) for _ in range(depth))
        self.bottom = Bottleneck(channels, channels, **kw)

    def _level(self, x, n, outs):
        up = self.up[n](x)
        low = self.low1[n](F.max_pool2d(x, 2))
        low = self._level(low, n + 1, outs) if n + 1 < self.depth else self.bottom(low)
        low = self.low3[n](low)
        out = up + _upsample(low, up)
        outs.append(out)
        return out

    def forward(self, x):
        outs: list[torch.Tensor] = []
        out = self._level(x, 0, outs)
        levels = ([outs[0]] * (4 - len(outs)) + outs)[-4:]
        return MultiLevelFeatures(*levels), out
