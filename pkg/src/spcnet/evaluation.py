"""PCK / PCKh metrics, threshold curves, report tables and heatmap overlays."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .config import MPII_PARENTS, REPORT_COLUMNS, ConfigError, DataError, PCKConfig
from .data import AnnotationRecord
from .heatmap_codec import KeypointSet, decode_heatmaps


@dataclass
class EvalReport:
    per_group: dict[str, float]
    total: float
    sample_count: int
    threshold: float
    variant: str
    correct: np.ndarray = field(repr=False, default=None)  # (S, N) bool
    counted: np.ndarray = field(repr=False, default=None)  # (S, N) bool

    def per_joint(self) -> np.ndarray:
        c = self.counted.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(c > 0, self.correct.sum(axis=0) / np.maximum(c, 1), np.nan)


def normalizer(rec: AnnotationRecord, cfg: PCKConfig) -> float:
    if cfg.variant == "pckh":
        if rec.head_box is None:
            raise DataError(f"{rec.image_ref}: PCKh needs a head_box")
        x1, y1, x2, y2 = rec.head_box
        return cfg.head_factor * float(np.hypot(x2 - x1, y2 - y1))
    if rec.torso_pair is None:
        raise DataError(f"{rec.image_ref}: PCK needs a torso_pair")
    a, b = rec.torso_pair
    if not (rec.joints.present[a] and rec.joints.present[b]):
        raise DataError(f"{rec.image_ref}: torso joints {a}, {b} are not annotated")
    return float(np.linalg.norm(rec.joints.coords[a] - rec.joints.coords[b]))


def joint_hits(preds: Sequence[KeypointSet], gts: Sequence[AnnotationRecord], cfg: PCKConfig):
    """Per-joint (correct, counted) boolean matrices of shape (samples, joints)."""
    if len(preds) != len(gts):
        raise ConfigError(f"{len(preds)} predictions for {len(gts)} ground-truth records")
    if not gts:
        return np.zeros((0, 0), bool), np.zeros((0, 0), bool)
    n = len(gts[0].joints)
    correct = np.zeros((len(gts), n), bool)
    counted = np.zeros((len(gts), n), bool)
    for s, (p, g) in enumerate(zip(preds, gts)):
        if len(p) != n or len(g.joints) != n:
            raise ConfigError("joint count differs between samples")
        norm = normalizer(g, cfg)
        dist = np.linalg.norm(p.coords - g.joints.coords, axis=1)
        counted[s] = g.joints.present
        correct[s] = counted[s] & p.present & (dist <= cfg.threshold * norm)
    return correct, counted


def _score(correct, counted, idx) -> float:
    c = counted[:, idx].sum()
    return float(correct[:, idx].sum() / c) if c else float("nan")


def pck_score(preds: Sequence[KeypointSet], gts: Sequence[AnnotationRecord], cfg: PCKConfig) -> EvalReport:
    """PCK/PCKh per joint group plus the total over all grouped joints.

    A joint is correct when its distance to ground truth is at most
    ``threshold * normalizer``. Absent ground-truth joints are ignored.
    """
    correct, counted = joint_hits(preds, gts, cfg)
    groups = {name: list(idx) for name, idx in cfg.joint_groups.items()}
    grouped = sorted({j for idx in groups.values() for j in idx})
    per_group = {name: _score(correct, counted, idx) for name, idx in groups.items()}
    return EvalReport(per_group, _score(correct, counted, grouped), len(gts), cfg.threshold,
                      cfg.variant, correct, counted)


@dataclass
class CurveTable:
    thresholds: np.ndarray
    columns: tuple[str, ...]
    values: np.ndarray  # (len(thresholds), len(columns))

    def rows(self):
        for t, row in zip(self.thresholds, self.values):
            yield float(t), dict(zip(self.columns, map(float, row)))


def default_curve_thresholds() -> np.ndarray:
    return np.round(np.arange(1, 11) * 0.05, 2)


def pck_curve(preds, gts, cfg: PCKConfig, thresholds: Sequence[float] | None = None) -> CurveTable:
    ts = np.asarray(default_curve_thresholds() if thresholds is None else thresholds, dtype=float)
    if np.any(np.diff(ts) < 0):
        raise ConfigError("thresholds must be sorted ascending")
    cols = (*cfg.joint_groups.keys(), "Total")
    values = np.empty((len(ts), len(cols)))
    for i, t in enumerate(ts):
        rep = pck_score(preds, gts, cfg.with_threshold(float(t)))
        values[i] = [*rep.per_group.values(), rep.total]
    return CurveTable(ts, cols, values)


def report_row(report: EvalReport) -> list[str]:
    missing = [c for c in REPORT_COLUMNS[:-1] if c not in report.per_group]
    if missing:
        raise ConfigError(f"report lacks joint groups {missing}")
    vals = [report.per_group[c] for c in REPORT_COLUMNS[:-1]] + [report.total]
    return [f"{100 * v:.1f}" for v in vals]


def format_report(report: EvalReport, fmt: str = "markdown", label: str | None = None) -> str:
    row = report_row(report)
    header = list(REPORT_COLUMNS)
    if label is not None:
        header, row = ["Method", *header], [label, *row]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        w.writerow(row)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(header) + " |", "|" + "---|" * len(header), "| " + " | ".join(row) + " |"]
        return "\n".join(lines) + "\n"
    raise ConfigError(f"unknown report format {fmt!r}")


def emit_report(report: EvalReport, path: str | Path, fmt: str | None = None, label: str | None = None) -> Path:
    path = Path(path)
    fmt = fmt or ("csv" if path.suffix == ".csv" else "markdown")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(format_report(report, fmt, label), encoding="utf-8")
    return path


def parse_report_csv(text: str) -> dict[str, float]:
    """Read back a CSV report as ``{column: percent}``."""
    rows = list(csv.reader(io.StringIO(text)))
    if len(rows) < 2:
        raise DataError("report has no data row")
    return {k: float(v) for k, v in zip(rows[0], rows[1]) if k in REPORT_COLUMNS}


def write_curve_csv(curve: CurveTable, path: str | Path) -> Path:
    path = Path(path)
    with path.open("w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["threshold", *curve.columns])
        for t, row in zip(curve.thresholds, curve.values):
            w.writerow([f"{t:.2f}", *(f"{100 * v:.1f}" for v in row)])
    return path


def plot_curve(curve: CurveTable, path: str | Path, title: str = "PCK curve") -> Path:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for k, name in enumerate(curve.columns):
        ax.plot(curve.thresholds, 100 * curve.values[:, k], marker="o", ms=3, label=name,
                lw=2.5 if name == "Total" else 1.2)
    ax.set_xlabel("normalized distance threshold")
    ax.set_ylabel("detection rate (%)")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return Path(path)


def render_heatmap_overlay(image: np.ndarray, heatmaps: np.ndarray, out_path: str | Path,
                           keypoints: KeypointSet | None = None, parents: Sequence[int] = MPII_PARENTS,
                           alpha: float = 0.5) -> Path:
    """Blend the channel-max heatmap over ``image`` (uint8 RGB) and draw the skeleton.

    Without explicit ``keypoints`` the heatmaps are decoded and scaled to the image.
    """
    import cv2
    from PIL import Image

    h, w = image.shape[:2]
    comp = np.clip(np.asarray(heatmaps, np.float32).max(axis=0), 0, 1)
    comp = cv2.resize(comp, (w, h), interpolation=cv2.INTER_LINEAR)
    color = cv2.applyColorMap((comp * 255).astype(np.uint8), cv2.COLORMAP_JET)[..., ::-1]
    out = (image.astype(np.float32) * (1 - alpha) + color.astype(np.float32) * alpha).astype(np.uint8)
    if keypoints is None:
        kps = decode_heatmaps(heatmaps)
        sx, sy = w / heatmaps.shape[-1], h / heatmaps.shape[-2]
        keypoints = kps.replace(coords=kps.coords * [sx, sy], frame="image")
    pts = keypoints.coords
    ok = keypoints.present
    if len(parents) == len(pts):
        for j, p in enumerate(parents):
            if p >= 0 and ok[j] and ok[p]:
                cv2.line(out, tuple(int(round(v)) for v in pts[j]), tuple(int(round(v)) for v in pts[p]),
                         (255, 255, 255), 1, cv2.LINE_AA)
    for j in np.nonzero(ok)[0]:
        cv2.circle(out, tuple(int(round(v)) for v in pts[j]), 2, (255, 255, 0), -1, cv2.LINE_AA)
    out_path = Path(out_path)
    try:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        Image.fromarray(out).save(out_path)
    except OSError as exc:
        raise OSError(f"cannot write overlay to {out_path}: {exc}") from exc
    return out_path
