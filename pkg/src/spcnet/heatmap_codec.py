"""Keypoint <-> Gaussian heatmap conversion and crop-frame affine maps.

Pixel convention: integer coordinates are pixel centres. A heatmap pixel
``(xh, yh)`` corresponds to crop pixel ``(stride*xh, stride*yh)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Sequence

import numpy as np

from .config import CodecConfig, ConfigError, DataError


class Visibility(IntEnum):
    ABSENT = 0
    OCCLUDED = 1
    VISIBLE = 2


FRAMES = ("image", "crop256", "heatmap64")
ABSENT_XY = (-1.0, -1.0)


@dataclass(frozen=True)
class KeypointSet:
    """N joints with visibility flags, tagged with the coordinate frame."""

    coords: np.ndarray
    visibility: np.ndarray
    frame: str = "image"

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64).reshape(-1, 2)
        vis = np.array(self.visibility, dtype=np.int64).reshape(-1)
        if len(coords) != len(vis):
            raise ConfigError(f"{len(coords)} coords but {len(vis)} visibility flags")
        if self.frame not in FRAMES:
            raise ConfigError(f"unknown frame {self.frame!r}")
        coords[vis == Visibility.ABSENT] = ABSENT_XY
        coords.setflags(write=False)
        vis.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "visibility", vis)

    def __len__(self):
        return len(self.visibility)

    @property
    def present(self) -> np.ndarray:
        return self.visibility != Visibility.ABSENT

    def replace(self, coords=None, visibility=None, frame=None) -> "KeypointSet":
        return KeypointSet(
            self.coords if coords is None else coords,
            self.visibility if visibility is None else visibility,
            self.frame if frame is None else frame,
        )

    @classmethod
    def absent(cls, n: int, frame: str = "image") -> "KeypointSet":
        return cls(np.full((n, 2), -1.0), np.zeros(n, dtype=np.int64), frame)

    def allclose(self, other: "KeypointSet", atol: float = 1e-6) -> bool:
        return (
            self.frame == other.frame
            and np.array_equal(self.visibility, other.visibility)
            and np.allclose(self.coords, other.coords, atol=atol)
        )


def _check_count(kps: KeypointSet, cfg: CodecConfig):
    if len(kps) != cfg.joint_count:
        raise ConfigError(f"expected {cfg.joint_count} joints, got {len(kps)}")


def encode_heatmaps(kps: KeypointSet, cfg: CodecConfig) -> np.ndarray:
    """Render one unit-peak Gaussian per joint on the heatmap grid.

    Each joint is rounded to its nearest grid pixel and the Gaussian is centred
    there, so the channel max is exactly 1 at the quantized joint. Values are
    zero outside a square window of half-size ``truncate_radius * sigma``.
    Joints that round outside the grid, or are absent, get an all-zero channel.

    Returns an ``(N, H, W)`` float32 array.
    """
    if kps.frame != "heatmap64":
        raise ConfigError(f"encode_heatmaps expects heatmap-frame keypoints, got {kps.frame}")
    _check_count(kps, cfg)
    size = cfg.heatmap_size
    out = np.zeros((len(kps), size, size), dtype=np.float32)
    radius = cfg.truncate_radius * cfg.sigma
    grid = np.arange(size, dtype=np.float64)
    for n, ((x, y), v) in enumerate(zip(kps.coords, kps.visibility)):
        if v == Visibility.ABSENT:
            continue
        cx, cy = math.floor(x + 0.5), math.floor(y + 0.5)
        if not (0 <= cx < size and 0 <= cy < size):
            continue
        gx = np.exp(-((grid - cx) ** 2) / (2 * cfg.sigma**2))
        gy = np.exp(-((grid - cy) ** 2) / (2 * cfg.sigma**2))
        gx[np.abs(grid - cx) > radius] = 0.0
        gy[np.abs(grid - cy) > radius] = 0.0
        out[n] = np.outer(gy, gx)
    return out


def presence_mask(kps: KeypointSet, cfg: CodecConfig, supervise_occluded: bool = True) -> np.ndarray:
    """Boolean per-joint loss mask for heatmap-frame keypoints."""
    size = cfg.heatmap_size
    rounded = np.floor(kps.coords + 0.5)
    inside = np.all((rounded >= 0) & (rounded < size), axis=1)
    mask = kps.present & inside
    if not supervise_occluded:
        mask &= kps.visibility == Visibility.VISIBLE
    return mask


def decode_heatmaps(hm: np.ndarray, cfg: CodecConfig | None = None) -> KeypointSet:
    """Argmax decoding, one joint per channel.

    Ties resolve to the first maximum in row-major order. A channel whose
    maximum is <= 0 decodes as absent. With ``cfg.subpixel`` the location is
    shifted a quarter pixel towards the larger neighbour on each axis.
    """
    hm = np.asarray(hm)
    if hm.ndim != 3 or hm.shape[0] == 0 or hm.size == 0:
        raise ConfigError(f"expected a non-empty (N, H, W) stack, got shape {hm.shape}")
    if cfg is not None and hm.shape[1:] != (cfg.heatmap_size, cfg.heatmap_size):
        raise ConfigError(f"heatmap resolution {hm.shape[1:]} does not match config")
    n, h, w = hm.shape
    flat = hm.reshape(n, -1)
    idx = np.argmax(flat, axis=1)
    peak = flat[np.arange(n), idx]
    coords = np.stack([idx % w, idx // w], axis=1).astype(np.float64)
    if cfg is not None and cfg.subpixel:
        for j in range(n):
            x, y = int(coords[j, 0]), int(coords[j, 1])
            if 0 < x < w - 1:
                coords[j, 0] += 0.25 * np.sign(hm[j, y, x + 1] - hm[j, y, x - 1])
            if 0 < y < h - 1:
                coords[j, 1] += 0.25 * np.sign(hm[j, y + 1, x] - hm[j, y - 1, x])
    vis = np.where(peak > 0, Visibility.VISIBLE, Visibility.ABSENT)
    return KeypointSet(coords, vis, "heatmap64")


def crop_to_heatmap(kps: KeypointSet, cfg: CodecConfig) -> KeypointSet:
    if kps.frame != "crop256":
        raise ConfigError(f"expected crop-frame keypoints, got {kps.frame}")
    return kps.replace(coords=kps.coords / cfg.stride, frame="heatmap64")


def heatmap_to_crop(kps: KeypointSet, cfg: CodecConfig) -> KeypointSet:
    if kps.frame != "heatmap64":
        raise ConfigError(f"expected heatmap-frame keypoints, got {kps.frame}")
    return kps.replace(coords=kps.coords * cfg.stride, frame="crop256")


PIXEL_STD = 200.0  # person scale 1.0 == 200 px box


@dataclass(frozen=True)
class CropTransform:
    """Affine map from image pixels to a square crop.

    The person box (``200 * scale`` px wide, centred on ``center``) is
    rotated by ``rotation`` degrees (counter-clockwise as displayed) and
    resized to ``output_size``; ``flip`` mirrors the crop with
    ``x' = output_size - 1 - x``.
    """

    center: tuple[float, float]
    scale: float
    rotation: float = 0.0
    flip: bool = False
    output_size: int = 256
    flip_pairs: tuple[tuple[int, int], ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.scale > 0:
            raise DataError(f"person scale must be > 0, got {self.scale}")

    @property
    def homogeneous(self) -> np.ndarray:
        s = self.output_size / (PIXEL_STD * self.scale)
        t = math.radians(self.rotation)
        c, si = math.cos(t), math.sin(t)
        cx, cy = self.center
        half = self.output_size / 2.0
        # image y points down, so a displayed CCW rotation uses +sin in the x row
        rot = np.array([[c, si, 0.0], [-si, c, 0.0], [0.0, 0.0, 1.0]])
        to_origin = np.array([[1.0, 0, -cx], [0, 1.0, -cy], [0, 0, 1.0]])
        scale = np.diag([s, s, 1.0])
        to_crop = np.array([[1.0, 0, half], [0, 1.0, half], [0, 0, 1.0]])
        m = to_crop @ scale @ rot @ to_origin
        if self.flip:
            m = np.array([[-1.0, 0, self.output_size - 1], [0, 1.0, 0], [0, 0, 1.0]]) @ m
        return m

    @property
    def matrix(self) -> np.ndarray:
        """Forward 2x3 affine (image -> crop)."""
        return self.homogeneous[:2]

    @property
    def inverse_matrix(self) -> np.ndarray:
        return np.linalg.inv(self.homogeneous)[:2]


def build_crop_transform(
    center: Sequence[float],
    scale: float,
    cfg: CodecConfig,
    rotation: float = 0.0,
    scale_jitter: float = 1.0,
    flip: bool = False,
    flip_pairs: Sequence[tuple[int, int]] = (),
) -> CropTransform:
    if not scale > 0 or not scale_jitter > 0:
        raise DataError(f"non-positive crop scale: scale={scale}, jitter={scale_jitter}")
    return CropTransform(
        center=(float(center[0]), float(center[1])),
        scale=float(scale) * float(scale_jitter),
        rotation=float(rotation),
        flip=bool(flip),
        output_size=cfg.input_size,
        flip_pairs=tuple(tuple(p) for p in flip_pairs),
    )


def swap_pairs(arr: np.ndarray, pairs: Sequence[tuple[int, int]]) -> np.ndarray:
    """Swap left/right entries along axis 0."""
    out = np.array(arr, copy=True)
    for a, b in pairs:
        out[[a, b]] = out[[b, a]]
    return out


def validate_flip_pairs(pairs: Sequence[tuple[int, int]], joint_count: int):
    seen: set[int] = set()
    for pair in pairs:
        if len(pair) != 2:
            raise ConfigError(f"flip pair {pair!r} is not a pair")
        a, b = pair
        if a == b or not (0 <= a < joint_count and 0 <= b < joint_count) or a in seen or b in seen:
            raise ConfigError(f"invalid flip pair {pair!r} for {joint_count} joints")
        seen.update((a, b))


def _apply(m: np.ndarray, pts: np.ndarray) -> np.ndarray:
    return pts @ m[:, :2].T + m[:, 2]


def transform_keypoints(kps: KeypointSet, t: CropTransform, direction: str = "forward") -> KeypointSet:
    """Map keypoints image->crop (``forward``) or crop->image (``inverse``).

    Forward mapping demotes joints that leave ``[0, output_size)`` to absent.
    When the transform flips, left/right joint indices are swapped.
    """
    if direction == "forward":
        src, dst, m = "image", "crop256", t.matrix
    elif direction == "inverse":
        src, dst, m = "crop256", "image", t.inverse_matrix
    else:
        raise ConfigError(f"direction must be forward|inverse, got {direction!r}")
    if kps.frame != src:
        raise ConfigError(f"{direction} transform expects {src} keypoints, got {kps.frame}")
    coords = _apply(m, kps.coords)
    vis = np.array(kps.visibility, copy=True)
    if direction == "forward":
        inside = np.all((coords >= 0) & (coords < t.output_size), axis=1)
        vis[~inside] = Visibility.ABSENT
    if t.flip and t.flip_pairs:
        coords = swap_pairs(coords, t.flip_pairs)
        vis = swap_pairs(vis, t.flip_pairs)
    return KeypointSet(coords, vis, dst)
