"""Context exemplars: observed co-occurrences of labeled superpixels.

Annotated frames supply the labels — track superpixels carry their class,
every other superpixel of those frames counts as background (label 0,
object class ``c`` maps to label ``c + 1``).  Ordered pairs of labeled
superpixels, grouped by their label pair, become 0/1 link matrices that
seed the propagation stage.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse

from .errors import ParseError, ValidationError
from .proposals import ProposalPartition

BACKGROUND = 0


@dataclass(frozen=True)
class LabelSet:
    """The ordered semantic labels: background first, then the object classes."""

    num_labels: int

    def __post_init__(self):
        if self.num_labels < 2:
            raise ValidationError(f"need background plus >= 1 class, got {self.num_labels}")

    @classmethod
    def from_partition(cls, part: ProposalPartition) -> "LabelSet":
        if not part.annotated:
            raise ValidationError("partition has no annotated superpixels")
        return cls(max(part.annotated.values()) + 2)

    def label_of_class(self, class_id: int) -> int:
        if not (0 <= class_id < self.num_labels - 1):
            raise ValidationError(f"class id {class_id} out of range")
        return class_id + 1

    def class_of_label(self, label: int) -> int:
        """Class id of an object label (background has none)."""
        if not (1 <= label < self.num_labels):
            raise ValidationError(f"label {label} is background or out of range")
        return label - 1


@dataclass(frozen=True)
class PairingPolicy:
    """How exemplar pairs are formed.

    Within-frame pairing (the default) emits every ordered pair of labeled
    superpixels that share a frame.  Cross-frame pairing pools all
    annotated frames and subsamples each label pair down to
    ``max_pairs_per_label_pair`` (uniformly, seeded, mirror-closed so the
    pair matrices stay transposes of each other).
    """

    cross_frame: bool = False
    max_pairs_per_label_pair: int = 10000
    seed: int = 0

    def validate(self) -> None:
        if self.max_pairs_per_label_pair < 2:
            raise ValidationError(
                f"max_pairs_per_label_pair must be >= 2, got {self.max_pairs_per_label_pair}"
            )


@dataclass
class ExemplarSet:
    """Ordered exemplar pairs grouped by (label_i, label_j)."""

    per_pair: dict[tuple[int, int], list[tuple[int, int]]] = field(default_factory=dict)

    def total(self) -> int:
        return sum(len(v) for v in self.per_pair.values())


def _labeled_by_frame(part: ProposalPartition, labels: LabelSet) -> dict[int, list[tuple[int, int]]]:
    out: dict[int, list[tuple[int, int]]] = {}
    for f in sorted(part.annotated_frames):
        entries = []
        for sp in part.frame_indices(f):
            cls = part.annotated.get(sp)
            entries.append((sp, BACKGROUND if cls is None else labels.label_of_class(cls)))
        out[f] = entries
    return out


def extract_exemplars(
    part: ProposalPartition,
    labels: LabelSet,
    policy: PairingPolicy = PairingPolicy(),
) -> ExemplarSet:
    """Collect ordered pairs of labeled superpixels, grouped by label pair.

    Both orientations of every pair are emitted, so the resulting link
    matrices satisfy the transpose symmetry the downstream propagation
    preserves.  Raises when no frame is annotated.
    """
    policy.validate()
    if not part.annotated_frames:
        raise ValidationError("no annotated frames: cannot form exemplar pairs")
    by_frame = _labeled_by_frame(part, labels)

    per_pair: dict[tuple[int, int], list[tuple[int, int]]] = {}

    def add(li: int, lj: int, i: int, j: int) -> None:
        per_pair.setdefault((li, lj), []).append((i, j))

    if not policy.cross_frame:
        for entries in by_frame.values():
            for i, li in entries:
                for j, lj in entries:
                    if i != j:
                        add(li, lj, i, j)
        return ExemplarSet(per_pair)

    pooled = [entry for entries in by_frame.values() for entry in entries]
    by_label: dict[int, list[int]] = {}
    for sp, lab in pooled:
        by_label.setdefault(lab, []).append(sp)

    cap = policy.max_pairs_per_label_pair
    present = sorted(by_label)
    for a_pos, la in enumerate(present):
        for lb in present[a_pos:]:
            if la == lb:
                nodes = by_label[la]
                canonical = [
                    (nodes[p], nodes[q])
                    for p in range(len(nodes))
                    for q in range(p + 1, len(nodes))
                ]
                keep = _subsample(canonical, cap // 2, policy.seed, (la, lb))
                for i, j in keep:
                    add(la, la, i, j)
                    add(la, la, j, i)
            else:
                canonical = [(i, j) for i in by_label[la] for j in by_label[lb]]
                keep = _subsample(canonical, cap, policy.seed, (la, lb))
                for i, j in keep:
                    add(la, lb, i, j)
                    add(lb, la, j, i)
    return ExemplarSet(per_pair)


def _subsample(pairs: list, cap: int, seed: int, label_pair: tuple[int, int]) -> list:
    if len(pairs) <= cap:
        return pairs
    rng = np.random.default_rng([seed, label_pair[0], label_pair[1]])
    picks = rng.choice(len(pairs), size=cap, replace=False)
    picks.sort()
    return [pairs[p] for p in picks]


def build_link_matrices(exemplars: ExemplarSet, n: int) -> list["LinkMatrix"]:
    """One sparse 0/1 matrix per label pair, nonzero exactly at the exemplar pairs."""
    out = []
    for label_pair in sorted(exemplars.per_pair):
        pairs = exemplars.per_pair[label_pair]
        if not pairs:
            continue
        idx = np.asarray(pairs, dtype=np.int64)
        if idx.min() < 0 or idx.max() >= n:
            raise ValidationError(f"exemplar index out of range for n={n}")
        if np.any(idx[:, 0] == idx[:, 1]):
            raise ValidationError("self-pair in exemplar set")
        mat = sparse.coo_matrix(
            (np.ones(len(pairs)), (idx[:, 0], idx[:, 1])), shape=(n, n)
        ).tocsr()
        mat.data[:] = 1.0  # a duplicated exemplar still encodes a single link
        out.append(LinkMatrix(label_pair, mat))
    return out


@dataclass
class LinkMatrix:
    """Observed 0/1 context links for one (label_i, label_j) pair."""

    label_pair: tuple[int, int]
    matrix: sparse.csr_matrix


def write_exemplars(exemplars: ExemplarSet, path) -> None:
    """Serialize as JSON: a list of {pair: [la, lb], links: [[i, j], ...]}."""
    payload = [
        {"pair": list(pair), "links": [list(p) for p in exemplars.per_pair[pair]]}
        for pair in sorted(exemplars.per_pair)
    ]
    Path(path).write_text(json.dumps(payload, indent=0) + "\n", encoding="utf-8")


def read_exemplars(path) -> ExemplarSet:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"{path}: {e.msg} at line {e.lineno}") from None
    if not isinstance(payload, list):
        raise ParseError(f"{path}: expected a JSON array")
    per_pair: dict[tuple[int, int], list[tuple[int, int]]] = {}
    for entry in payload:
        if not isinstance(entry, dict) or "pair" not in entry or "links" not in entry:
            raise ParseError(f"{path}: entries need 'pair' and 'links'")
        pair = entry["pair"]
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair)):
            raise ParseError(f"{path}: 'pair' must be two integers")
        links = []
        for link in entry["links"]:
            if not (isinstance(link, list) and len(link) == 2 and all(isinstance(v, int) for v in link)):
                raise ParseError(f"{path}: each link must be two integers")
            links.append((link[0], link[1]))
        per_pair[(pair[0], pair[1])] = links
    return ExemplarSet(per_pair)
