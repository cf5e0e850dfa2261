"""Single, flip-ensembled and multi-scale inference."""
from __future__ import annotations

from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .config import DEFAULT_TEST_SCALES, CodecConfig, ConfigError
from .heatmap_codec import (
    CropTransform,
    KeypointSet,
    decode_heatmaps,
    heatmap_to_crop,
    transform_keypoints,
    validate_flip_pairs,
)
from .model import SPCNet


def _batched(image: torch.Tensor) -> torch.Tensor:
    image = torch.as_tensor(image)
    return image.unsqueeze(0) if image.dim() == 3 else image


@torch.no_grad()
def predict_heatmaps(model: SPCNet, image: torch.Tensor) -> torch.Tensor:
    """Final-head heatmaps ``(B, N, H, W)`` in eval mode."""
    model.eval()
    p = next(model.parameters())
    x = _batched(image).to(p.device, p.dtype)
    return model(x).final


def flip_heatmaps(h: torch.Tensor, flip_pairs: Sequence[tuple[int, int]]) -> torch.Tensor:
    """Mirror heatmaps horizontally and swap left/right channels."""
    h = h.flip(-1)
    perm = list(range(h.shape[-3]))
    for a, b in flip_pairs:
        perm[a], perm[b] = b, a
    return h[..., perm, :, :]


@torch.no_grad()
def infer_flip(model: SPCNet, image: torch.Tensor, flip_pairs: Sequence[tuple[int, int]]) -> torch.Tensor:
    validate_flip_pairs(flip_pairs, model.cfg.joint_count)
    x = _batched(image)
    h = predict_heatmaps(model, x)
    h_flip = predict_heatmaps(model, x.flip(-1))
    return 0.5 * (h + flip_heatmaps(h_flip, flip_pairs))


@torch.no_grad()
def infer_multiscale(
    model: SPCNet,
    image: torch.Tensor,
    scales: Sequence[float] = DEFAULT_TEST_SCALES,
    flip: bool = False,
    flip_pairs: Sequence[tuple[int, int]] = (),
) -> torch.Tensor:
    """Average heatmaps over a resized-input pyramid.

    Each scale resizes the crop to the nearest size the network accepts,
    runs it (optionally flip-ensembled), and resizes heatmaps back to the
    base heatmap resolution.
    """
    scales = list(scales)
    if not scales:
        raise ConfigError("scale list must not be empty")
    if any(s <= 0 for s in scales):
        raise ConfigError(f"scales must be positive: {scales}")
    x = _batched(image)
    size = x.shape[-2:]
    multiple = 4 * 2 ** model.cfg.downsample_count
    acc = None
    for s in scales:
        target = tuple(max(multiple, int(round(d * s / multiple)) * multiple) for d in size)
        xs = x if target == tuple(size) else F.interpolate(
            x, size=target, mode="bilinear", align_corners=False)
        h = infer_flip(model, xs, flip_pairs) if flip else predict_heatmaps(model, xs)
        out_size = (size[0] // 4, size[1] // 4)
        if h.shape[-2:] != out_size:
            h = F.interpolate(h, size=out_size, mode="bilinear", align_corners=False)
        acc = h if acc is None else acc + h
    return acc / len(scales)


def heatmaps_to_image_keypoints(hm: np.ndarray, transform: CropTransform, codec: CodecConfig) -> KeypointSet:
    kps = decode_heatmaps(hm, codec)
    return transform_keypoints(heatmap_to_crop(kps, codec), transform, "inverse")


def infer_single(model: SPCNet, image: torch.Tensor, transform: CropTransform,
                 codec: CodecConfig) -> tuple[KeypointSet, np.ndarray]:
    """Forward one crop, decode the fusion-head heatmaps, map back to image pixels."""
    hm = predict_heatmaps(model, image)[0].float().cpu().numpy()
    return heatmaps_to_image_keypoints(hm, transform, codec), hm
