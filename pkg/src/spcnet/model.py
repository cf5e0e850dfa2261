"""SPCNet assembly: stem, stacked hourglass modules with intermediate heads, fusion head, loss."""
from __future__ import annotations

import math
from typing import NamedTuple, Sequence

import torch
import torch.nn as nn
import torch.nn.functional as F

from .config import ConfigError, SPCNetConfig
from .dhm import Bottleneck, ConventionalHourglass, DHMConfig, DilatedHourglass
from .sim import InformationCollection, build_fuser


class PredictionBundle(NamedTuple):
    intermediate: list[torch.Tensor]  # stack_count x (B, N, H, W)
    final: torch.Tensor  # (B, N, H, W)
    weights: torch.Tensor | None = None  # (B, 4, H, W) fusion maps when fusion_kind == "sim"

    @property
    def terms(self) -> list[torch.Tensor]:
        """Supervised outputs; the fusion head is omitted when it is just the last stack."""
        if self.final is self.intermediate[-1]:
            return list(self.intermediate)
        return [*self.intermediate, self.final]


class LossReport(NamedTuple):
    per_term: list[torch.Tensor]
    total: torch.Tensor
    weighting: tuple[float, ...]


class Stem(nn.Module):
    """7x7/2 conv -> bottleneck -> 2x2 max-pool -> two bottlenecks; quarter resolution out."""

    def __init__(self, channels: int, bn_momentum=0.1, bn_eps=1e-5):
        super().__init__()
        c1, c2 = max(channels // 4, 1), max(channels // 2, 1)
        kw = dict(bn_momentum=bn_momentum, bn_eps=bn_eps)
        self.conv = nn.Conv2d(3, c1, 7, stride=2, padding=3, bias=False)
        self.bn = nn.BatchNorm2d(c1, momentum=bn_momentum, eps=bn_eps)
        self.res1 = Bottleneck(c1, c2, **kw)
        self.res2 = Bottleneck(c2, c2, **kw)
        self.res3 = Bottleneck(c2, channels, **kw)

    def forward(self, x):
        if x.dim() != 4 or x.shape[1] != 3 or x.shape[-1] % 4 or x.shape[-2] % 4:
            raise ConfigError(f"stem expects (B, 3, H, W) with H, W divisible by 4, got {tuple(x.shape)}")
        x = F.relu(self.bn(self.conv(x)))
        x = self.res1(x)
        x = F.max_pool2d(x, 2)
        return self.res3(self.res2(x))


class SPCNet(nn.Module):
    def __init__(self, cfg: SPCNetConfig):
        super().__init__()
        self.cfg = cfg
        c, n = cfg.base_channels, cfg.joint_count
        bn = dict(bn_momentum=cfg.bn_momentum, bn_eps=cfg.bn_eps)
        self.stem = Stem(c, **bn)
        if cfg.module_kind == "dhm":
            dcfg = DHMConfig(
                channels=c, input_resolution=cfg.heatmap_size, dilation=cfg.dilation,
                dilated_block_count=cfg.dilated_block_count,
                decoder_refine_blocks=cfg.decoder_refine_blocks, **bn,
            )
            self.stacks = nn.ModuleList(DilatedHourglass(dcfg) for _ in range(cfg.stack_count))
        else:
            self.stacks = nn.ModuleList(
                ConventionalHourglass(c, cfg.hourglass_depth, **bn) for _ in range(cfg.stack_count)
            )
        self.heads = nn.ModuleList(nn.Conv2d(c, n, 1) for _ in range(cfg.stack_count))
        self.remaps = nn.ModuleList(nn.Conv2d(n, c, 1) for _ in range(cfg.stack_count - 1))
        if cfg.fusion_kind != "none":
            self.collect = InformationCollection(c, cfg.stack_count, **bn)
            self.fuse = build_fuser(cfg.fusion_kind, c, cfg.squeeze_bn_relu)
            self.final_head = nn.Conv2d(c, n, 1)
        self.reset_parameters()

    def reset_parameters(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d):
                nn.init.kaiming_normal_(m.weight, mode="fan_in", nonlinearity="relu")
                if m.bias is not None:
                    nn.init.zeros_(m.bias)
            elif isinstance(m, nn.BatchNorm2d):
                nn.init.ones_(m.weight)
                nn.init.zeros_(m.bias)
        heads = list(self.heads) + ([self.final_head] if hasattr(self, "final_head") else [])
        with torch.no_grad():
            for h in heads:
                h.weight.mul_(self.cfg.head_init_scale)

    @property
    def loss_term_count(self) -> int:
        return self.cfg.stack_count + (self.cfg.fusion_kind != "none")

    def forward(self, images: torch.Tensor) -> PredictionBundle:
        x = self.stem(images)
        feats, heatmaps = [], []
        for s, module in enumerate(self.stacks):
            levels, out = module(x)
            h = self.heads[s](out)
            feats.append(levels)
            heatmaps.append(h)
            if s < len(self.stacks) - 1:
                x = x + out + self.remaps[s](h)
        if self.cfg.fusion_kind == "none":
            return PredictionBundle(heatmaps, heatmaps[-1], None)
        fused, weights = self.fuse(self.collect(feats))
        return PredictionBundle(heatmaps, self.final_head(fused), weights)


def heatmap_loss(pred: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Half squared error summed over masked joints and pixels, averaged over the batch."""
    if pred.shape != target.shape:
        raise ConfigError(f"prediction {tuple(pred.shape)} vs target {tuple(target.shape)}")
    if mask.shape != pred.shape[:2]:
        raise ConfigError(f"mask shape {tuple(mask.shape)} does not match (B, N) = {tuple(pred.shape[:2])}")
    sq = (pred - target).pow(2).sum(dim=(-2, -1))
    return 0.5 * (sq * mask.to(sq.dtype)).sum(dim=1).mean()


def compute_loss(pred: PredictionBundle, target: torch.Tensor, mask: torch.Tensor,
                 weighting: Sequence[float] | None = None) -> LossReport:
    terms = [heatmap_loss(p, target, mask) for p in pred.terms]
    w = tuple(float(v) for v in (weighting or [1.0] * len(terms)))
    if len(w) != len(terms):
        raise ConfigError(f"{len(w)} loss weights for {len(terms)} terms")
    total = sum(wi * t for wi, t in zip(w, terms))
    return LossReport(terms, total, w)


def build_model(cfg: SPCNetConfig, seed: int | None = None) -> SPCNet:
    if seed is not None:
        torch.manual_seed(seed)
    return SPCNet(cfg)


def count_parameters(model: nn.Module) -> int:
    return sum(math.prod(p.shape) for p in model.parameters())
