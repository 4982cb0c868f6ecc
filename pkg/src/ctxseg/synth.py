"""Synthetic video fixture: two rectangles drifting over a noisy background.

Produces everything the pipeline consumes — grayscale frames, superpixel
maps, per-superpixel features, detections (including a low-confidence
distractor that the proposal filter must drop) and ground-truth class
masks.  Object boxes move a couple of pixels per frame so consecutive
detections overlap well above the association threshold.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .errors import ValidationError
from .superpixel import SegmentationParams, segment

Box = tuple[float, float, float, float]


@dataclass(frozen=True)
class SynthParams:
    frames: int = 5
    width: int = 64
    height: int = 48
    seed: int = 7
    noise: float = 0.01
    texture: float = 0.12  # checkerboard step that keeps segments tile-sized
    tile: int = 7
    feature_dim: int = 8
    feature_noise: float = 0.05
    segmentation: SegmentationParams = SegmentationParams(sigma=0.5, k=0.6, min_size=8)

    def validate(self) -> None:
        if self.frames < 1:
            raise ValidationError(f"frames must be >= 1, got {self.frames}")
        if self.width < 48 or self.height < 48:
            raise ValidationError("fixture needs at least 48x48 pixels to place both objects")
        if self.noise < 0 or self.feature_noise < 0 or self.texture < 0:
            raise ValidationError("noise levels must be >= 0")
        if self.tile < 2:
            raise ValidationError("tile must be >= 2 pixels")
        if self.feature_dim < 3:
            raise ValidationError("feature_dim must be >= 3 (one prototype per label)")


_INTENSITY = (0.2, 0.55, 0.9)  # background, class 0, class 1


def object_boxes(params: SynthParams, frame: int) -> list[tuple[int, Box]]:
    """The two (class_id, box) rectangles on a frame; boxes stay in-bounds."""
    x0 = 6 + 2 * frame
    a = (float(x0), 8.0, float(x0 + 16), 20.0)
    x1 = params.width - 20 - 2 * frame
    b = (float(x1), 28.0, float(x1 + 14), 42.0)
    return [(0, a), (1, b)]


def _paint_truth(params: SynthParams, frame: int) -> np.ndarray:
    mask = np.zeros((params.height, params.width), dtype=np.int32)
    for class_id, (bx0, by0, bx1, by1) in object_boxes(params, frame):
        mask[int(by0):int(by1), int(bx0):int(bx1)] = class_id + 1
    return mask


def generate(out_dir, params: SynthParams = SynthParams()) -> dict:
    """Write the fixture under ``out_dir``; returns a summary of what was made.

    Layout: ``frames/frame_%03d.pgm``, ``maps/map_%03d.map``,
    ``truth/mask_%03d.map``, ``features.fmx``, ``detections.jsonl``.
    """
    params.validate()
    out = Path(out_dir)
    for sub in ("frames", "maps", "truth"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(params.seed)

    # orthonormal prototypes: cross-class affinities vanish, so the k-NN
    # graph splits into per-class clusters and context stays class-pure
    basis, _ = np.linalg.qr(rng.normal(size=(params.feature_dim, params.feature_dim)))
    prototypes = basis[:3]

    # static checkerboard texture: its tile boundaries stop the greedy merge,
    # so each frame oversegments into roughly tile-sized superpixels
    ys, xs = np.mgrid[0 : params.height, 0 : params.width]
    checker = ((ys // params.tile + xs // params.tile) % 2).astype(np.float64)
    texture = params.texture * (checker - 0.5)

    detections = []
    feature_rows = []
    counts = []
    for f in range(params.frames):
        truth = _paint_truth(params, f)
        img = np.choose(truth, _INTENSITY) + texture + rng.normal(0.0, params.noise, truth.shape)
        img = np.clip(img, 0.0, 1.0)
        # quantize exactly as the PGM writer will, so segmentation of the
        # written file reproduces these maps
        img = np.rint(img * 255) / 255
        io.write_pgm(img, out / "frames" / f"frame_{f:03d}.pgm")
        io.write_mask(truth, out / "truth" / f"mask_{f:03d}.map")

        sp_map = segment(img, params.segmentation)
        io.write_label_map(sp_map, out / "maps" / f"map_{f:03d}.map")
        k = int(sp_map.max()) + 1
        counts.append(k)

        # features: each superpixel takes its majority label's prototype
        majority = _majority_labels(sp_map, truth, k)
        noise = rng.normal(0.0, params.feature_noise, (k, params.feature_dim))
        feature_rows.append(prototypes[majority] + noise)

        for class_id, box in object_boxes(params, f):
            detections.append(io.DetectionRecord(f, class_id, 0.9, box))

    distractor_frame = min(2, params.frames - 1)
    detections.append(
        io.DetectionRecord(distractor_frame, 0, 0.4, (10.0, 26.0, 26.0, 44.0))
    )
    io.write_detections(detections, out / "detections.jsonl")

    features = io.normalize_rows(np.vstack(feature_rows))
    io.write_feature_matrix(features, out / "features.fmx")
    return {
        "frames": params.frames,
        "superpixels": counts,
        "detections": len(detections),
        "feature_dim": params.feature_dim,
    }


def _majority_labels(sp_map: np.ndarray, truth: np.ndarray, k: int) -> np.ndarray:
    """Most frequent truth value per superpixel (ties go to the lower value)."""
    num_values = int(truth.max()) + 1
    table = np.zeros((k, num_values), dtype=np.int64)
    np.add.at(table, (sp_map.ravel(), truth.ravel()), 1)
    return table.argmax(axis=1)
