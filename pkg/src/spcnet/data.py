"""Annotation I/O, crop/augment, synthetic stick-figure scenes and the torch dataset.

Annotation file schema: a JSON array, one object per person instance::

    {
      "image": "img_0001.png",          # path, relative to the annotation file
      "center": [x, y],                 # person centre, image px
      "scale": 1.3,                     # person box = 200 * scale px
      "joints": [[x, y], ...],          # N entries, image px; absent -> [-1, -1]
      "visibility": [2, 1, 0, ...],     # 2 visible, 1 occluded, 0 absent
      "head_box": [x1, y1, x2, y2],     # optional, PCKh normaliser
      "torso_pair": [i, j],             # optional, PCK normaliser joints
      "split": "train"                  # train | val | test
    }
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, NamedTuple, Sequence

import cv2
import numpy as np
import torch
from PIL import Image

from .config import (
    MPII_FLIP_PAIRS,
    MPII_PARENTS,
    AugmentConfig,
    CodecConfig,
    DataError,
)
from .heatmap_codec import (
    KeypointSet,
    Visibility,
    build_crop_transform,
    crop_to_heatmap,
    encode_heatmaps,
    presence_mask,
    transform_keypoints,
)

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class AnnotationRecord:
    image_ref: str
    center: tuple[float, float]
    scale: float
    joints: KeypointSet
    head_box: tuple[float, float, float, float] | None = None
    torso_pair: tuple[int, int] | None = None
    split: str = "train"

    def __post_init__(self):
        if not self.scale > 0:
            raise DataError(f"scale must be > 0, got {self.scale}")
        if self.head_box is not None:
            x1, y1, x2, y2 = self.head_box
            if not (x1 < x2 and y1 < y2):
                raise DataError(f"head_box not well-ordered: {self.head_box}")
        if self.split not in SPLITS:
            raise DataError(f"unknown split {self.split!r}")

    def to_json(self) -> dict[str, Any]:
        return {
            "image": self.image_ref,
            "center": [float(v) for v in self.center],
            "scale": float(self.scale),
            "joints": self.joints.coords.tolist(),
            "visibility": self.joints.visibility.tolist(),
            "head_box": None if self.head_box is None else [float(v) for v in self.head_box],
            "torso_pair": None if self.torso_pair is None else list(self.torso_pair),
            "split": self.split,
        }


_REQUIRED = ("image", "center", "scale", "joints", "visibility")


def _is_num(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def _is_pair(v) -> bool:
    return isinstance(v, (list, tuple)) and len(v) == 2 and all(_is_num(x) for x in v)


def record_from_json(obj: Any, index: int = 0) -> AnnotationRecord:
    if not isinstance(obj, dict):
        raise DataError(f"record {index}: expected an object")
    problems = [f"missing field '{k}'" for k in _REQUIRED if k not in obj]
    if not problems:
        if not isinstance(obj["image"], str):
            problems.append("'image' must be a string")
        if not _is_pair(obj["center"]):
            problems.append("'center' must be [x, y]")
        if not _is_num(obj["scale"]) or obj["scale"] <= 0:
            problems.append("'scale' must be a positive number")
        joints, vis = obj["joints"], obj["visibility"]
        if not isinstance(joints, list) or not all(_is_pair(j) for j in joints):
            problems.append("'joints' must be a list of [x, y]")
        if not isinstance(vis, list) or not all(v in (0, 1, 2) for v in vis):
            problems.append("'visibility' must be a list of 0/1/2")
        elif isinstance(joints, list) and len(vis) != len(joints):
            problems.append("'visibility' length differs from 'joints'")
        hb = obj.get("head_box")
        if hb is not None and not (
            isinstance(hb, list) and len(hb) == 4 and all(_is_num(v) for v in hb)
            and hb[0] < hb[2] and hb[1] < hb[3]
        ):
            problems.append("'head_box' must be [x1, y1, x2, y2] with x1<x2, y1<y2")
        tp = obj.get("torso_pair")
        n = len(joints) if isinstance(joints, list) else 0
        if tp is not None and not (
            isinstance(tp, list) and len(tp) == 2
            and all(isinstance(i, int) and 0 <= i < n for i in tp)
        ):
            problems.append("'torso_pair' must be two joint indices")
        if obj.get("split", "train") not in SPLITS:
            problems.append(f"'split' must be one of {SPLITS}")
    if problems:
        raise DataError(f"record {index}: " + "; ".join(problems))
    return AnnotationRecord(
        image_ref=obj["image"],
        center=tuple(float(v) for v in obj["center"]),
        scale=float(obj["scale"]),
        joints=KeypointSet(obj["joints"], obj["visibility"], "image"),
        head_box=None if obj.get("head_box") is None else tuple(float(v) for v in obj["head_box"]),
        torso_pair=None if obj.get("torso_pair") is None else tuple(obj["torso_pair"]),
        split=obj.get("split", "train"),
    )


def load_annotations(path: str | Path) -> list[AnnotationRecord]:
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(raw, list):
        raise DataError(f"{path}: top level must be a JSON array of records")
    return [record_from_json(obj, i) for i, obj in enumerate(raw)]


def save_annotations(records: Sequence[AnnotationRecord], path: str | Path):
    Path(path).write_text(json.dumps([r.to_json() for r in records], indent=1), encoding="utf-8")


class AugmentParams(NamedTuple):
    rotation: float = 0.0
    scale_jitter: float = 1.0
    flip: bool = False


IDENTITY_AUG = AugmentParams()


def sample_augment_params(rng: np.random.Generator, cfg: AugmentConfig = AugmentConfig()) -> AugmentParams:
    rot = rng.uniform(-cfg.rotation, cfg.rotation)
    jitter = rng.uniform(*cfg.scale_range)
    flip = rng.random() < cfg.flip_prob
    return AugmentParams(float(rot), float(jitter), bool(flip))


class CropSample(NamedTuple):
    image: np.ndarray  # (3, S, S) float32, normalised
    keypoints: KeypointSet  # crop frame
    target: np.ndarray  # (N, H, W) float32
    mask: np.ndarray  # (N,) bool


def read_image(path: str | Path) -> np.ndarray:
    """RGB uint8 ``(H, W, 3)``."""
    with Image.open(path) as im:
        return np.asarray(im.convert("RGB"))


def warp_image(image: np.ndarray, matrix: np.ndarray, size: int) -> np.ndarray:
    """Bilinear warp with zero fill; ``matrix`` maps source to destination pixels."""
    return cv2.warpAffine(
        np.ascontiguousarray(image), matrix.astype(np.float64), (size, size),
        flags=cv2.INTER_LINEAR, borderMode=cv2.BORDER_CONSTANT, borderValue=0,
    )


def normalize_image(crop: np.ndarray, mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225)) -> np.ndarray:
    x = crop.astype(np.float32) / 255.0
    x = (x - np.asarray(mean, np.float32)) / np.asarray(std, np.float32)
    return np.ascontiguousarray(x.transpose(2, 0, 1))


def crop_and_augment(
    image: np.ndarray,
    rec: AnnotationRecord,
    aug: AugmentParams,
    codec: CodecConfig,
    flip_pairs: Sequence[tuple[int, int]] = MPII_FLIP_PAIRS,
    mean=(0.485, 0.456, 0.406),
    std=(0.229, 0.224, 0.225),
    supervise_occluded: bool = True,
) -> CropSample:
    t = build_crop_transform(rec.center, rec.scale, codec, aug.rotation, aug.scale_jitter,
                             aug.flip, flip_pairs)
    crop = warp_image(image, t.matrix, codec.input_size)
    kps = transform_keypoints(rec.joints, t, "forward")
    hm_kps = crop_to_heatmap(kps, codec)
    target = encode_heatmaps(hm_kps, codec)
    mask = presence_mask(hm_kps, codec, supervise_occluded)
    return CropSample(normalize_image(crop, mean, std), kps, target, mask)


# --- synthetic scenes -------------------------------------------------------

# rest pose for the MPII skeleton, in person units (y down, pelvis at origin)
_REST_POSE = np.array([
    [-0.32, 1.8], [-0.3, 1.0], [-0.3, 0.15], [0.3, 0.15], [0.3, 1.0], [0.32, 1.8],
    [0.0, 0.0], [0.0, -1.05], [0.0, -1.4], [0.0, -1.9],
    [-0.95, -0.35], [-0.75, -0.7], [-0.45, -1.1], [0.45, -1.1], [0.75, -0.7], [0.95, -0.35],
])


@dataclass(frozen=True)
class SyntheticSceneSpec:
    joint_count: int = 16
    canvas_size: int = 128
    parents: tuple[int, ...] = MPII_PARENTS
    rest_pose: tuple[tuple[float, float], ...] = tuple(map(tuple, _REST_POSE))
    marker_radius: int = 2
    limb_width: int = 2
    limb_color: tuple[int, int, int] = (128, 128, 128)
    background: tuple[int, int, int] = (24, 24, 24)
    head_joints: tuple[int, int] = (8, 9)
    torso_pair: tuple[int, int] = (12, 3)
    angle_jitter: float = 25.0  # degrees of random bend per bone
    seed: int = 0

    def __post_init__(self):
        if len(self.parents) != self.joint_count or len(self.rest_pose) != self.joint_count:
            raise DataError("parents/rest_pose length must equal joint_count")
        roots = [j for j, p in enumerate(self.parents) if p < 0]
        if len(roots) != 1:
            raise DataError(f"topology needs exactly one root, found {len(roots)}")
        for j in range(self.joint_count):
            seen, k = set(), j
            while k >= 0:
                if k in seen:
                    raise DataError(f"topology has a cycle through joint {j}")
                seen.add(k)
                k = self.parents[k]

    @property
    def root(self) -> int:
        return self.parents.index(-1)

    def marker_colors(self) -> np.ndarray:
        """Distinct saturated RGB colour per joint, none equal to limb/background."""
        hues = np.linspace(0, 180, self.joint_count, endpoint=False).astype(np.uint8)
        vals = np.where(np.arange(self.joint_count) % 2 == 0, 255, 190).astype(np.uint8)
        hsv = np.stack([hues, np.full_like(hues, 255), vals], axis=1)[None]
        return cv2.cvtColor(hsv, cv2.COLOR_HSV2RGB)[0]


def _children_order(parents: Sequence[int]) -> list[int]:
    order, frontier = [], [parents.index(-1)]
    while frontier:
        j = frontier.pop(0)
        order.append(j)
        frontier.extend(c for c, p in enumerate(parents) if p == j)
    return order


def sample_pose(spec: SyntheticSceneSpec, rng: np.random.Generator) -> np.ndarray:
    """Pose in canvas pixels; retries until all joints fit and markers do not touch."""
    rest = np.asarray(spec.rest_pose, dtype=np.float64)
    order = _children_order(spec.parents)
    size, r = spec.canvas_size, spec.marker_radius
    margin = 2 * r + 2
    for _ in range(1000):
        pose = np.zeros_like(rest)
        bend = np.zeros(spec.joint_count)
        for j in order[1:]:
            p = spec.parents[j]
            bend[j] = bend[p] + math.radians(rng.uniform(-spec.angle_jitter, spec.angle_jitter))
            c, s = math.cos(bend[j]), math.sin(bend[j])
            v = rest[j] - rest[p]
            pose[j] = pose[p] + np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])
        rot = math.radians(rng.uniform(-20, 20))
        c, s = math.cos(rot), math.sin(rot)
        pose = pose @ np.array([[c, s], [-s, c]])
        extent = np.ptp(pose, axis=0).max()
        unit = rng.uniform(0.55, 0.75) * size / extent
        pose = pose * unit
        lo, hi = pose.min(axis=0), pose.max(axis=0)
        room = size - 2 * margin - (hi - lo)
        if np.any(room < 0):
            continue
        pose = pose - lo + margin + rng.uniform(0, 1, 2) * room
        d = np.linalg.norm(pose[:, None] - pose[None], axis=-1) + np.eye(len(pose)) * 1e9
        if d.min() > 2 * r + 2:
            return pose
    raise DataError("could not sample a non-overlapping pose; enlarge canvas or shrink markers")


def render_scene(spec: SyntheticSceneSpec, pose: np.ndarray) -> np.ndarray:
    size = spec.canvas_size
    img = np.empty((size, size, 3), np.uint8)
    img[:] = spec.background
    for j, p in enumerate(spec.parents):
        if p >= 0:
            a = tuple(int(round(v)) for v in pose[j])
            b = tuple(int(round(v)) for v in pose[p])
            cv2.line(img, a, b, spec.limb_color, spec.limb_width, lineType=cv2.LINE_8)
    yy, xx = np.mgrid[0:size, 0:size]
    for j, color in enumerate(spec.marker_colors()):
        disc = (xx - pose[j, 0]) ** 2 + (yy - pose[j, 1]) ** 2 <= (spec.marker_radius + 0.5) ** 2
        img[disc] = color
    return img


def _record_for_pose(spec: SyntheticSceneSpec, pose: np.ndarray, image_ref: str, split: str) -> AnnotationRecord:
    lo, hi = pose.min(axis=0), pose.max(axis=0)
    center = (lo + hi) / 2
    scale = max(hi - lo) * 1.25 / 200.0
    h0, h1 = spec.head_joints
    head_len = np.linalg.norm(pose[h0] - pose[h1])
    hc = (pose[h0] + pose[h1]) / 2
    half = head_len / 2
    return AnnotationRecord(
        image_ref=image_ref,
        center=(float(center[0]), float(center[1])),
        scale=float(scale),
        joints=KeypointSet(pose, np.full(len(pose), int(Visibility.VISIBLE)), "image"),
        head_box=(hc[0] - half, hc[1] - half, hc[0] + half, hc[1] + half),
        torso_pair=tuple(spec.torso_pair),
        split=split,
    )


def generate_synthetic_dataset(
    spec: SyntheticSceneSpec, count: int, rng: np.random.Generator | int | None = None,
    split: str = "train",
) -> tuple[list[np.ndarray], list[AnnotationRecord]]:
    """Render ``count`` stick figures with exact annotations; deterministic for a given seed."""
    if rng is None or isinstance(rng, int):
        rng = np.random.default_rng(spec.seed if rng is None else rng)
    images, records = [], []
    for i in range(count):
        pose = sample_pose(spec, rng)
        images.append(render_scene(spec, pose))
        records.append(_record_for_pose(spec, pose, f"synth_{i:05d}.png", split))
    return images, records


def write_dataset(images: Sequence[np.ndarray], records: Sequence[AnnotationRecord], out_dir: str | Path,
                  ann_name: str = "annotations.json") -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for img, rec in zip(images, records):
        Image.fromarray(img).save(out_dir / rec.image_ref)
    ann = out_dir / ann_name
    save_annotations(records, ann)
    return ann


def marker_centroid(image: np.ndarray, color: Sequence[int]) -> tuple[float, float] | None:
    hit = np.all(image == np.asarray(color, np.uint8), axis=-1)
    if not hit.any():
        return None
    ys, xs = np.nonzero(hit)
    return float(xs.mean()), float(ys.mean())


# --- torch dataset ----------------------------------------------------------


class PoseDataset(torch.utils.data.Dataset):
    """Records plus image source, cropped/augmented on access.

    ``images`` may be a list of in-memory arrays aligned with ``records``;
    otherwise each record's ``image_ref`` is read relative to ``image_root``.
    Augmentation for sample ``i`` in epoch ``e`` draws from a generator seeded
    with ``(seed, e, i)`` so runs and resumes are reproducible.
    """

    def __init__(self, records, codec: CodecConfig, images=None, image_root=None,
                 augment: AugmentConfig | None = None, seed: int = 0,
                 flip_pairs=MPII_FLIP_PAIRS, mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225),
                 supervise_occluded: bool = True):
        self.records = list(records)
        self.codec = codec
        self.images = images
        self.image_root = Path(image_root) if image_root is not None else Path(".")
        self.augment = augment
        self.seed = seed
        self.epoch = 0
        self.flip_pairs = flip_pairs
        self.mean, self.std = mean, std
        self.supervise_occluded = supervise_occluded
        self._cache: dict[int, tuple] = {}

    def __len__(self):
        return len(self.records)

    def set_epoch(self, epoch: int):
        self.epoch = epoch

    def image(self, i: int) -> np.ndarray:
        if self.images is not None:
            return self.images[i]
        return read_image(self.image_root / self.records[i].image_ref)

    def params(self, i: int) -> AugmentParams:
        if self.augment is None:
            return IDENTITY_AUG
        return sample_augment_params(np.random.default_rng([self.seed, self.epoch, i]), self.augment)

    def __getitem__(self, i):
        if self.augment is None and i in self._cache:
            return self._cache[i]
        s = crop_and_augment(self.image(i), self.records[i], self.params(i), self.codec,
                             self.flip_pairs, self.mean, self.std, self.supervise_occluded)
        item = (torch.from_numpy(s.image), torch.from_numpy(s.target), torch.from_numpy(s.mask), i)
        if self.augment is None:
            self._cache[i] = item
        return item
