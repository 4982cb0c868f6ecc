"""Object proposals from per-frame detections.

Raw detections are filtered by confidence and greedily linked into tracks:
the highest-confidence unconsumed detection seeds a track that is extended
frame by frame in both directions, absorbing the best same-class match by
box overlap.  Tracks shorter than three frames are discarded.  The
surviving track boxes then split every superpixel of their frames into an
annotated set (box superpixels, carrying the track's class) and the
unlabeled rest.
"""

from __future__ import annotations

import json
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError
from .io import DetectionRecord, validate_detection

Box = tuple[float, float, float, float]


def box_iou(a: Box, b: Box) -> float:
    """Intersection over union of two half-open pixel boxes.

    Degenerate boxes have zero area; two degenerate boxes score 0.0.
    """
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    inter = max(0.0, iw) * max(0.0, ih)
    area_a = max(0.0, ax1 - ax0) * max(0.0, ay1 - ay0)
    area_b = max(0.0, bx1 - bx0) * max(0.0, by1 - by0)
    union = area_a + area_b - inter
    return inter / union if union > 0.0 else 0.0


def filter_hypotheses(records, min_confidence: float = 0.5) -> list[DetectionRecord]:
    """Keep detections with confidence >= ``min_confidence``, preserving order."""
    if not (0.0 <= min_confidence <= 1.0):
        raise ValidationError(f"min_confidence must be in [0, 1], got {min_confidence}")
    for rec in records:
        validate_detection(rec)
    return [rec for rec in records if rec.confidence >= min_confidence]


@dataclass
class Track:
    """A class-consistent sequence of boxes on consecutive frames."""

    track_id: int
    class_id: int
    members: list[tuple[int, Box]] = field(default_factory=list)

    @property
    def frames(self) -> list[int]:
        return [f for f, _ in self.members]


def _predict_box(members: list[tuple[int, Box]], forward: bool, motion: str) -> Box:
    """Box expected on the next frame in the given direction."""
    if motion == "linear" and len(members) >= 2:
        if forward:
            (_, prev), (_, last) = members[-2], members[-1]
        else:
            (_, last), (_, prev) = members[0], members[1]
        return tuple(2 * l - p for l, p in zip(last, prev))
    return members[-1][1] if forward else members[0][1]


def associate(
    records,
    iou_thresh: float = 0.5,
    min_length: int = 3,
    motion: str = "constant",
) -> list[Track]:
    """Greedy association of filtered detections into tracks.

    Seeds are taken in decreasing confidence (input order breaks ties) and
    extended one frame at a time toward both ends of the video.  At each
    step the unconsumed detection of the seed's class whose IoU with the
    predicted box is highest and at least ``iou_thresh`` is absorbed; the
    first frame without an acceptable match stops that direction, so tracks
    never skip frames.  ``motion`` selects the prediction: ``"constant"``
    reuses the nearest member's box, ``"linear"`` extrapolates from the two
    nearest members.  Tracks with fewer than ``min_length`` members are
    dropped and their members stay available to later seeds.
    """
    if not (0.0 <= iou_thresh <= 1.0):
        raise ValidationError(f"iou_thresh must be in [0, 1], got {iou_thresh}")
    if min_length < 1:
        raise ValidationError(f"min_length must be >= 1, got {min_length}")
    if motion not in ("constant", "linear"):
        raise ValidationError(f"unknown motion model '{motion}'")
    records = list(records)
    for rec in records:
        validate_detection(rec)

    by_frame: dict[int, list[int]] = {}
    for i, rec in enumerate(records):
        by_frame.setdefault(rec.frame, []).append(i)
    seed_order = sorted(range(len(records)), key=lambda i: -records[i].confidence)
    consumed = [False] * len(records)
    failed_seed = [False] * len(records)

    def best_match(frame: int, class_id: int, predicted: Box):
        best_i, best_iou = -1, 0.0
        for i in by_frame.get(frame, ()):
            rec = records[i]
            if consumed[i] or rec.class_id != class_id:
                continue
            iou = box_iou(predicted, rec.box)
            if iou >= iou_thresh and iou > best_iou:
                best_i, best_iou = i, iou
        return best_i

    tracks: list[Track] = []
    for seed in seed_order:
        if consumed[seed] or failed_seed[seed]:
            continue
        rec = records[seed]
        members = [(rec.frame, rec.box)]
        member_ids = [seed]
        for forward in (True, False):
            frame = rec.frame
            while True:
                frame = frame + 1 if forward else frame - 1
                i = best_match(frame, rec.class_id, _predict_box(members, forward, motion))
                if i < 0:
                    break
                entry = (frame, records[i].box)
                members.append(entry) if forward else members.insert(0, entry)
                member_ids.append(i)
        if len(members) >= min_length:
            for i in member_ids:
                consumed[i] = True
            tracks.append(Track(len(tracks), rec.class_id, members))
        else:
            # A failed seed can never succeed later: the pool of unconsumed
            # candidates only shrinks.  It stays available as a member.
            failed_seed[seed] = True
    return tracks


@dataclass
class ProposalPartition:
    """Split of all video superpixels into annotated and unlabeled sets.

    Superpixels are indexed globally: frame ``f`` owns the contiguous index
    range ``frame_ranges[f]``.  ``annotated`` maps a superpixel to its
    track class; ``annotated_frames`` lists frames with at least one
    annotated superpixel.
    """

    annotated: dict[int, int]
    unlabeled: set[int]
    annotated_frames: set[int]
    frame_ranges: list[tuple[int, int]]

    @property
    def n_superpixels(self) -> int:
        return self.frame_ranges[-1][1] if self.frame_ranges else 0

    def frame_of(self, sp: int) -> int:
        starts = [lo for lo, _ in self.frame_ranges]
        f = bisect_right(starts, sp) - 1
        if f < 0 or sp >= self.frame_ranges[f][1]:
            raise ValidationError(f"superpixel index {sp} out of range")
        return f

    def frame_indices(self, frame: int) -> range:
        lo, hi = self.frame_ranges[frame]
        return range(lo, hi)

    def background_indices(self) -> list[int]:
        """Unlabeled superpixels of annotated frames, in index order."""
        out = []
        for f in sorted(self.annotated_frames):
            out.extend(i for i in self.frame_indices(f) if i not in self.annotated)
        return out

    def validate(self) -> None:
        if self.annotated.keys() & self.unlabeled:
            raise ValidationError("annotated and unlabeled sets overlap")
        if len(self.annotated) + len(self.unlabeled) != self.n_superpixels:
            raise ValidationError("annotated and unlabeled sets do not cover all superpixels")


def _box_slices(box: Box, h: int, w: int):
    x0, y0, x1, y1 = box
    ys = slice(max(0, int(np.ceil(y0))), min(h, int(np.ceil(y1))))
    xs = slice(max(0, int(np.ceil(x0))), min(w, int(np.ceil(x1))))
    return ys, xs


def partition_superpixels(tracks, maps, cover_thresh: float = 0.5) -> ProposalPartition:
    """Assign superpixels covered by track boxes to their track's class.

    ``maps`` holds one superpixel map per frame (list position = frame
    index).  A superpixel is annotated with a box's class when at least
    ``cover_thresh`` of its pixels fall inside that box; among qualifying
    boxes the one covering more of the superpixel wins, exact ties going to
    the lower class id.  Everything else is unlabeled.
    """
    if not (0.0 < cover_thresh <= 1.0):
        raise ValidationError(f"cover_thresh must be in (0, 1], got {cover_thresh}")
    maps = [np.asarray(m) for m in maps]
    frame_ranges: list[tuple[int, int]] = []
    offset = 0
    for m in maps:
        k = int(m.max()) + 1
        frame_ranges.append((offset, offset + k))
        offset += k

    boxes_by_frame: dict[int, list[tuple[int, Box]]] = {}
    for track in tracks:
        for frame, box in track.members:
            if frame >= len(maps):
                raise ValidationError(f"track {track.track_id} references missing frame {frame}")
            boxes_by_frame.setdefault(frame, []).append((track.class_id, box))

    annotated: dict[int, int] = {}
    annotated_frames: set[int] = set()
    for frame, boxes in sorted(boxes_by_frame.items()):
        m = maps[frame]
        h, w = m.shape
        k = frame_ranges[frame][1] - frame_ranges[frame][0]
        sp_area = np.bincount(m.ravel(), minlength=k)
        if np.any(sp_area == 0):
            raise ValidationError(f"frame {frame}: superpixel ids are not contiguous")
        # best (coverage, -class) per superpixel of this frame
        best_cov = np.zeros(k)
        best_cls = np.full(k, -1, dtype=np.int64)
        for class_id, box in boxes:
            ys, xs = _box_slices(box, h, w)
            inside = np.bincount(m[ys, xs].ravel(), minlength=k) if (
                ys.stop > ys.start and xs.stop > xs.start
            ) else np.zeros(k, dtype=np.int64)
            cov = inside / sp_area
            better = (cov >= cover_thresh) & (
                (cov > best_cov) | ((cov == best_cov) & (best_cls >= 0) & (class_id < best_cls))
            )
            best_cov = np.where(better, cov, best_cov)
            best_cls = np.where(better, class_id, best_cls)
        hit = np.flatnonzero(best_cls >= 0)
        if hit.size:
            annotated_frames.add(frame)
            base = frame_ranges[frame][0]
            for sp in hit.tolist():
                annotated[base + sp] = int(best_cls[sp])

    unlabeled = set(range(offset)) - annotated.keys()
    part = ProposalPartition(annotated, unlabeled, annotated_frames, frame_ranges)
    part.validate()
    return part


def write_partition(part: ProposalPartition, tracks, path) -> None:
    """Serialize the partition (and the tracks behind it) as JSON."""
    payload = {
        "frame_ranges": [list(r) for r in part.frame_ranges],
        "annotated": {str(sp): cls for sp, cls in sorted(part.annotated.items())},
        "annotated_frames": sorted(part.annotated_frames),
        "tracks": [
            {
                "id": t.track_id,
                "classId": t.class_id,
                "members": [[f, list(box)] for f, box in t.members],
            }
            for t in tracks
        ],
    }
    Path(path).write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")


def read_partition(path) -> tuple[ProposalPartition, list[Track]]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e.msg} at line {e.lineno}") from None
    try:
        frame_ranges = [tuple(r) for r in payload["frame_ranges"]]
        annotated = {int(k): int(v) for k, v in payload["annotated"].items()}
        annotated_frames = set(payload["annotated_frames"])
        tracks = [
            Track(t["id"], t["classId"], [(m[0], tuple(m[1])) for m in t["members"]])
            for t in payload["tracks"]
        ]
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"{path}: malformed partition payload ({e})") from None
    total = frame_ranges[-1][1] if frame_ranges else 0
    unlabeled = set(range(total)) - annotated.keys()
    part = ProposalPartition(annotated, unlabeled, annotated_frames, frame_ranges)
    part.validate()
    return part, tracks
