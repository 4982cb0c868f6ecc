"""File formats used to pass artifacts between pipeline stages.

Every stage communicates through files so each one can be run and tested in
isolation.  The formats:

``.fmx`` feature matrix
    Binary: magic ``CTXF``, two little-endian u32 (row count ``n``, feature
    dimension ``d``), then ``n * d`` little-endian f32 values row-major.
    No trailing bytes are tolerated.  A comma-separated text file with one
    row per line is accepted as an alternate input.

label map
    ASCII: a ``W H`` header line, then ``H`` rows of ``W`` space-separated
    non-negative integers.  Superpixel maps must use the contiguous id
    range ``0..K-1``; class masks (same layout, ``0`` = background,
    ``classId + 1`` for objects) skip the contiguity check.

detections (``.jsonl``)
    One JSON object per line with keys ``frame``, ``classId``,
    ``confidence`` and ``box`` = ``[x0, y0, x1, y1]`` in pixel units,
    half-open.  Blank lines are ignored.

frames
    ASCII PGM (``P2``) for grayscale input frames, ASCII PPM (``P3``) for
    color overlays.  Intensities are scaled to ``[0, 1]`` on read.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

FMX_MAGIC = b"CTXF"


@dataclass(frozen=True)
class DetectionRecord:
    """One scored class-box hypothesis on a single frame."""

    frame: int
    class_id: int
    confidence: float
    box: tuple[float, float, float, float]


def validate_detection(rec: DetectionRecord, where: str = "") -> None:
    if rec.frame < 0:
        raise ValidationError(f"negative frame index {rec.frame}{where}")
    if rec.class_id < 0:
        raise ValidationError(f"negative class id {rec.class_id}{where}")
    if not (0.0 <= rec.confidence <= 1.0):
        raise ValidationError(f"confidence {rec.confidence} outside [0, 1]{where}")
    x0, y0, x1, y1 = rec.box
    if not (x0 < x1 and y0 < y1):
        raise ValidationError(f"degenerate box {rec.box}{where}")


def normalize_rows(m) -> np.ndarray:
    """Scale every row of ``m`` to unit L2 norm; returns float32.

    Zero rows are rejected: a zero feature vector carries no direction for
    the inner-product affinities computed downstream.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.ndim != 2:
        raise ValidationError(f"expected a 2-d matrix, got shape {m.shape}")
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms == 0.0):
        bad = int(np.flatnonzero(norms == 0.0)[0])
        raise ValidationError(f"row {bad} has zero norm and cannot be normalized")
    return (m / norms[:, None]).astype(np.float32)


# --------------------------------------------------------------------------
# feature matrices


def read_feature_matrix(path) -> np.ndarray:
    """Read an ``(n, d)`` float32 matrix from ``.fmx`` or CSV.

    The format is sniffed from the magic bytes.  Values are returned as
    stored; rows are not renormalized.
    """
    raw = Path(path).read_bytes()
    if raw[:4] == FMX_MAGIC:
        return _parse_fmx(raw, path)
    return _parse_feature_csv(raw, path)


def _parse_fmx(raw: bytes, path) -> np.ndarray:
    if len(raw) < 12:
        raise ParseError(f"{path}: header truncated at byte {len(raw)} (need 12)")
    n, d = struct.unpack_from("<II", raw, 4)
    if n < 1 or d < 1:
        raise ValidationError(f"{path}: empty matrix declared (n={n}, d={d})")
    expected = 12 + 4 * n * d
    if len(raw) != expected:
        raise ParseError(
            f"{path}: file is {len(raw)} bytes, expected {expected} for n={n} d={d}"
        )
    data = np.frombuffer(raw, dtype="<f4", offset=12).reshape(n, d)
    if not np.all(np.isfinite(data)):
        i = int(np.flatnonzero(~np.isfinite(data.ravel()))[0])
        raise ParseError(f"{path}: non-finite value at element {i} (byte {12 + 4 * i})")
    return np.array(data, dtype=np.float32)


def _parse_feature_csv(raw: bytes, path) -> np.ndarray:
    try:
        text = raw.decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: neither an fmx file nor UTF-8 text (byte {e.start})") from None
    rows: list[list[float]] = []
    width = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split(",")
        try:
            row = [float(f) for f in fields]
        except ValueError:
            raise ParseError(f"{path}: line {lineno}: non-numeric field") from None
        if not all(math.isfinite(v) for v in row):
            raise ParseError(f"{path}: line {lineno}: non-finite value")
        if width is None:
            width = len(row)
        elif len(row) != width:
            raise ParseError(f"{path}: line {lineno}: expected {width} fields, got {len(row)}")
        rows.append(row)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return np.asarray(rows, dtype=np.float32)


def write_feature_matrix(m, path) -> None:
    """Write ``m`` as ``.fmx``; a read-back reproduces the float32 payload bit for bit."""
    m = np.asarray(m, dtype=np.float32)
    if m.ndim != 2 or m.shape[0] < 1 or m.shape[1] < 1:
        raise ValidationError(f"feature matrix must be 2-d and non-empty, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValidationError("feature matrix contains non-finite values")
    n, d = m.shape
    with open(path, "wb") as f:
        f.write(FMX_MAGIC)
        f.write(struct.pack("<II", n, d))
        f.write(np.ascontiguousarray(m, dtype="<f4").tobytes())


# --------------------------------------------------------------------------
# label maps and class masks


def read_label_map(path) -> np.ndarray:
    """Read a superpixel map; ids must cover ``0..K-1`` with no gaps."""
    ids = _parse_map(Path(path).read_bytes(), path)
    _check_contiguous(ids, path)
    return ids


def read_mask(path) -> np.ndarray:
    """Read a class mask: label-map layout, 0 = background, ``classId + 1`` for objects."""
    return _parse_map(Path(path).read_bytes(), path)


def _parse_map(raw: bytes, path) -> np.ndarray:
    try:
        text = raw.decode("ascii")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not ASCII at byte {e.start}") from None
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise ParseError(f"{path}: missing 'W H' header")
    head = lines[0].split()
    if len(head) != 2:
        raise ParseError(f"{path}: line 1: header must be 'W H'")
    try:
        w, h = int(head[0]), int(head[1])
    except ValueError:
        raise ParseError(f"{path}: line 1: non-integer dimensions") from None
    if w < 1 or h < 1:
        raise ValidationError(f"{path}: empty map ({w}x{h})")
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != h:
        raise ParseError(f"{path}: expected {h} data rows, got {len(body)}")
    out = np.empty((h, w), dtype=np.int32)
    for r, ln in enumerate(body):
        fields = ln.split()
        if len(fields) != w:
            raise ParseError(f"{path}: line {r + 2}: expected {w} ids, got {len(fields)}")
        try:
            row = [int(f) for f in fields]
        except ValueError:
            raise ParseError(f"{path}: line {r + 2}: non-integer id") from None
        if min(row) < 0:
            raise ValidationError(f"{path}: line {r + 2}: negative id")
        out[r] = row
    return out


def _check_contiguous(ids: np.ndarray, path) -> None:
    present = np.unique(ids)
    k = int(present[-1]) + 1
    if len(present) != k:
        missing = sorted(set(range(k)) - set(present.tolist()))[:3]
        raise ValidationError(f"{path}: ids not contiguous; first missing {missing}")


def write_label_map(ids, path) -> None:
    """Write a superpixel map, enforcing the contiguous-id invariant."""
    ids = np.asarray(ids)
    _check_contiguous(ids, path)
    write_mask(ids, path)


def write_mask(ids, path) -> None:
    ids = np.asarray(ids)
    if ids.ndim != 2 or ids.size == 0:
        raise ValidationError(f"map must be 2-d and non-empty, got shape {ids.shape}")
    if ids.min() < 0:
        raise ValidationError("map contains negative ids")
    h, w = ids.shape
    lines = [f"{w} {h}"]
    lines.extend(" ".join(str(v) for v in row) for row in ids.tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


# --------------------------------------------------------------------------
# detections


def read_detections(path) -> list[DetectionRecord]:
    """Read JSON-lines detections, preserving file order."""
    try:
        text = Path(path).read_bytes().decode("utf-8")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not UTF-8 at byte {e.start}") from None
    records = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise ParseError(f"{path}: line {lineno}: {e.msg}") from None
        records.append(_detection_from_obj(obj, lineno, path))
    return records


def _detection_from_obj(obj, lineno: int, path) -> DetectionRecord:
    where = f" ({path}: line {lineno})"
    if not isinstance(obj, dict):
        raise ParseError(f"expected a JSON object{where}")
    for key in ("frame", "classId", "confidence", "box"):
        if key not in obj:
            raise ParseError(f"missing key '{key}'{where}")
    frame, class_id, conf, box = obj["frame"], obj["classId"], obj["confidence"], obj["box"]
    if not isinstance(frame, int) or isinstance(frame, bool):
        raise ParseError(f"'frame' must be an integer{where}")
    if not isinstance(class_id, int) or isinstance(class_id, bool):
        raise ParseError(f"'classId' must be an integer{where}")
    if not isinstance(conf, (int, float)) or isinstance(conf, bool):
        raise ParseError(f"'confidence' must be a number{where}")
    if (
        not isinstance(box, list)
        or len(box) != 4
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in box)
    ):
        raise ParseError(f"'box' must be an array of 4 numbers{where}")
    rec = DetectionRecord(frame, class_id, float(conf), tuple(float(v) for v in box))
    validate_detection(rec, where)
    return rec


def write_detections(records, path) -> None:
    lines = []
    for rec in records:
        validate_detection(rec)
        lines.append(
            json.dumps(
                {
                    "frame": rec.frame,
                    "classId": rec.class_id,
                    "confidence": rec.confidence,
                    "box": list(rec.box),
                }
            )
        )
    Path(path).write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")


# --------------------------------------------------------------------------
# frames and overlays


def _pnm_tokens(text: str, path):
    tokens = []
    for line in text.splitlines():
        hash_at = line.find("#")
        if hash_at >= 0:
            line = line[:hash_at]
        tokens.extend(line.split())
    if not tokens:
        raise ParseError(f"{path}: empty image file")
    return tokens


def read_pgm(path) -> np.ndarray:
    """Read an ASCII PGM (``P2``) frame; returns float64 ``(h, w)`` in [0, 1]."""
    try:
        text = Path(path).read_bytes().decode("ascii")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not ASCII at byte {e.start}") from None
    tokens = _pnm_tokens(text, path)
    if tokens[0] != "P2":
        raise ParseError(f"{path}: expected magic 'P2', got '{tokens[0]}'")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
        vals = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    except ValueError:
        raise ParseError(f"{path}: non-integer token in header or payload") from None
    if w < 1 or h < 1 or maxval < 1:
        raise ValidationError(f"{path}: bad dimensions {w}x{h} maxval={maxval}")
    if vals.size != w * h:
        raise ParseError(f"{path}: expected {w * h} samples, got {vals.size}")
    if vals.min() < 0 or vals.max() > maxval:
        raise ParseError(f"{path}: sample outside [0, {maxval}]")
    return vals.reshape(h, w).astype(np.float64) / maxval


def write_pgm(img, path) -> None:
    """Write a grayscale image with intensities in [0, 1] as ASCII PGM (maxval 255)."""
    img = np.asarray(img, dtype=np.float64)
    if img.ndim != 2 or img.size == 0:
        raise ValidationError(f"grayscale frame must be 2-d, got shape {img.shape}")
    if not np.all(np.isfinite(img)) or img.min() < 0.0 or img.max() > 1.0:
        raise ValidationError("intensities must be finite and within [0, 1]")
    q = np.rint(img * 255).astype(np.int64)
    h, w = img.shape
    lines = ["P2", f"{w} {h}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in q.tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def write_ppm(rgb, path) -> None:
    """Write an 8-bit color image as ASCII PPM (``P3``)."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3 or rgb.size == 0:
        raise ValidationError(f"color image must be (h, w, 3), got shape {rgb.shape}")
    if rgb.dtype != np.uint8:
        rgb = np.asarray(rgb, dtype=np.float64)
        if not np.all(np.isfinite(rgb)) or rgb.min() < 0.0 or rgb.max() > 1.0:
            raise ValidationError("float color values must be finite and within [0, 1]")
        rgb = np.rint(rgb * 255).astype(np.uint8)
    h, w, _ = rgb.shape
    flat = rgb.reshape(h, w * 3)
    lines = ["P3", f"{w} {h}", "255"]
    lines.extend(" ".join(str(v) for v in row) for row in flat.tolist())
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_ppm(path) -> np.ndarray:
    """Read an ASCII PPM (``P3``); returns uint8 ``(h, w, 3)``."""
    try:
        text = Path(path).read_bytes().decode("ascii")
    except UnicodeDecodeError as e:
        raise ParseError(f"{path}: not ASCII at byte {e.start}") from None
    tokens = _pnm_tokens(text, path)
    if tokens[0] != "P3":
        raise ParseError(f"{path}: expected magic 'P3', got '{tokens[0]}'")
    try:
        w, h, maxval = (int(t) for t in tokens[1:4])
        vals = np.array([int(t) for t in tokens[4:]], dtype=np.int64)
    except ValueError:
        raise ParseError(f"{path}: non-integer token in header or payload") from None
    if vals.size != w * h * 3:
        raise ParseError(f"{path}: expected {w * h * 3} samples, got {vals.size}")
    if vals.min() < 0 or vals.max() > maxval:
        raise ParseError(f"{path}: sample outside [0, {maxval}]")
    return (vals.reshape(h, w, 3) * 255 // maxval).astype(np.uint8)
