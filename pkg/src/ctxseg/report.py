"""Evaluation of predicted class masks and report rendering.

Quality is intersection-over-union per class value (0 = background), with
pixel counts pooled across all frames before dividing; classes absent from
both prediction and truth are left out.  The report writes a delimited
summary and renders the per-class and per-frame breakdowns as figures.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib
import numpy as np

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .errors import ValidationError


@dataclass
class EvaluationReport:
    per_class: dict[int, float]
    average: float
    per_frame: list[float] = field(default_factory=list)


def mask_iou(pred: np.ndarray, truth: np.ndarray, value: int) -> float:
    """IoU of one class value between two masks of identical shape."""
    if pred.shape != truth.shape:
        raise ValidationError(f"shape mismatch {pred.shape} vs {truth.shape}")
    p = pred == value
    t = truth == value
    union = np.logical_or(p, t).sum()
    if union == 0:
        raise ValidationError(f"class value {value} absent from both masks")
    return float(np.logical_and(p, t).sum() / union)


def evaluate_masks(preds, truths) -> EvaluationReport:
    """Score predicted masks against ground truth.

    ``preds`` and ``truths`` are parallel per-frame mask lists.  Per-class
    IoU pools intersection and union pixel counts over all frames; the
    average is the unweighted mean over the classes present anywhere.
    ``per_frame`` holds each frame's mean IoU over its own present classes.
    """
    preds = [np.asarray(p) for p in preds]
    truths = [np.asarray(t) for t in truths]
    if len(preds) != len(truths) or not preds:
        raise ValidationError(
            f"need equally many prediction and truth masks, got {len(preds)} vs {len(truths)}"
        )
    values: set[int] = set()
    for p, t in zip(preds, truths):
        if p.shape != t.shape:
            raise ValidationError(f"shape mismatch {p.shape} vs {t.shape}")
        values.update(np.unique(p).tolist())
        values.update(np.unique(t).tolist())

    inter = dict.fromkeys(values, 0)
    union = dict.fromkeys(values, 0)
    per_frame = []
    for p, t in zip(preds, truths):
        frame_scores = []
        for v in sorted(values):
            pv = p == v
            tv = t == v
            u = int(np.logical_or(pv, tv).sum())
            i = int(np.logical_and(pv, tv).sum())
            inter[v] += i
            union[v] += u
            if u > 0:
                frame_scores.append(i / u)
        per_frame.append(float(np.mean(frame_scores)) if frame_scores else 1.0)

    per_class = {v: inter[v] / union[v] for v in sorted(values) if union[v] > 0}
    if not per_class:
        raise ValidationError("no class present in predictions or truth")
    average = float(np.mean(list(per_class.values())))
    return EvaluationReport(per_class, average, per_frame)


def write_report(report: EvaluationReport, out_dir) -> list[Path]:
    """Write ``report.csv`` plus rendered figures; returns the paths written.

    The CSV has rows ``kind,id,iou`` with kinds ``class``, ``frame`` and a
    final ``average``; floats are fixed to six decimals so reruns are
    byte-identical.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    figures = out / "figures"
    figures.mkdir(exist_ok=True)
    paths = []

    csv_path = out / "report.csv"
    with open(csv_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["kind", "id", "iou"])
        for v in sorted(report.per_class):
            writer.writerow(["class", v, f"{report.per_class[v]:.6f}"])
        for i, s in enumerate(report.per_frame):
            writer.writerow(["frame", i, f"{s:.6f}"])
        writer.writerow(["average", "", f"{report.average:.6f}"])
    paths.append(csv_path)

    fig, ax = plt.subplots(figsize=(6, 4))
    names = [("bg" if v == 0 else f"class {v - 1}") for v in sorted(report.per_class)]
    ax.bar(names, [report.per_class[v] for v in sorted(report.per_class)], color="#4878d0")
    ax.axhline(report.average, color="#d65f5f", linestyle="--", label=f"mean {report.average:.3f}")
    ax.set_ylim(0.0, 1.05)
    ax.set_ylabel("IoU")
    ax.set_title("Per-class overlap")
    ax.legend()
    class_fig = figures / "per_class_iou.png"
    fig.savefig(class_fig, dpi=100)
    plt.close(fig)
    paths.append(class_fig)

    if report.per_frame:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.plot(range(len(report.per_frame)), report.per_frame, marker="o", color="#4878d0")
        ax.set_ylim(0.0, 1.05)
        ax.set_xlabel("frame")
        ax.set_ylabel("mean IoU")
        ax.set_title("Per-frame overlap")
        frame_fig = figures / "per_frame_iou.png"
        fig.savefig(frame_fig, dpi=100)
        plt.close(fig)
        paths.append(frame_fig)
    return paths


# 20 visually-distinct overlay colors; label 0 (background) keeps the frame
# visible and labels cycle through the rest.
PALETTE = np.array(
    [
        [0, 0, 0],
        [230, 25, 75],
        [60, 180, 75],
        [255, 225, 25],
        [0, 130, 200],
        [245, 130, 48],
        [145, 30, 180],
        [70, 240, 240],
        [240, 50, 230],
        [210, 245, 60],
        [250, 190, 212],
        [0, 128, 128],
        [220, 190, 255],
        [170, 110, 40],
        [255, 250, 200],
        [128, 0, 0],
        [170, 255, 195],
        [128, 128, 0],
        [255, 215, 180],
        [0, 0, 128],
    ],
    dtype=np.uint8,
)


def overlay(frame: np.ndarray, mask: np.ndarray, alpha: float = 0.5) -> np.ndarray:
    """Blend a label mask over a grayscale frame; returns uint8 RGB.

    Background pixels show the frame unchanged; labeled pixels mix the
    frame with the label's palette color (labels beyond the palette wrap
    around, skipping the background entry).
    """
    frame = np.asarray(frame, dtype=np.float64)
    mask = np.asarray(mask)
    if frame.shape != mask.shape:
        raise ValidationError(f"shape mismatch {frame.shape} vs {mask.shape}")
    if not (0.0 <= alpha <= 1.0):
        raise ValidationError(f"alpha must be in [0, 1], got {alpha}")
    color_ids = np.where(mask == 0, 0, (mask - 1) % (len(PALETTE) - 1) + 1)
    colors = PALETTE[color_ids].astype(np.float64)
    gray = np.repeat((frame * 255.0)[:, :, None], 3, axis=2)
    blend = np.where((mask > 0)[:, :, None], (1 - alpha) * gray + alpha * colors, gray)
    return np.rint(blend).astype(np.uint8)
