"""Energy model over superpixels: classifier unaries plus context pairwise terms.

The labeling cost is a Gibbs energy

    E(x) = sum_i psi_i(x_i) + sum_(i,j) phi(S_ij(x_i, x_j))

where ``psi`` is the negative log softmax over one-vs-rest linear SVM
margins (clamped to [0, PSI_MAX]) and ``phi(s) = exp(-s^2 / (2 beta))``
turns a propagated context score into a penalty: strongly supported label
pairs approach cost 0, unsupported ones cost 1.  ``beta`` adapts to the
score scale as the mean squared score over every (pair, label-pair) entry
that participates in the energy, so uniformly rescaling the scores leaves
the potentials unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .context import BACKGROUND, LabelSet
from .errors import ValidationError
from .propagation import ContextScores
from .proposals import ProposalPartition

PSI_MAX = 20.0
BETA_FLOOR = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1.0
    epochs: int = 200
    lam: float = 0.01
    seed: int = 0

    def validate(self) -> None:
        if not (self.learning_rate > 0.0):
            raise ValidationError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.epochs < 1:
            raise ValidationError(f"epochs must be >= 1, got {self.epochs}")
        if not (self.lam > 0.0):
            raise ValidationError(f"lam must be > 0, got {self.lam}")


@dataclass
class UnaryModel:
    """One-vs-rest linear classifier; the last weight column is the bias."""

    weights: np.ndarray  # (num_labels, d + 1)
    config: TrainConfig


def fit_linear_svm(x: np.ndarray, y: np.ndarray, num_labels: int, cfg: TrainConfig) -> np.ndarray:
    """Full-batch subgradient descent on the regularized hinge loss.

    One binary problem per label (that label vs the rest).  Each epoch
    applies the mean subgradient with step ``learning_rate / (lam * t)``
    and projects onto the ball ``|w| <= 1 / sqrt(lam)``.  Updates depend on
    the mean over samples only, so duplicating every sample changes
    nothing; with zero initialization the whole fit is deterministic.
    Returns the ``(num_labels, d + 1)`` weight matrix (bias appended).
    """
    cfg.validate()
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValidationError(f"sample/label mismatch: {x.shape} vs {y.shape}")
    counts = np.bincount(y, minlength=num_labels)
    missing = np.flatnonzero(counts == 0).tolist()
    if missing:
        raise ValidationError(f"labels without training samples: {missing}")

    aug = np.hstack([x, np.ones((x.shape[0], 1))])
    s = aug.shape[0]
    signs = np.where(y[:, None] == np.arange(num_labels)[None, :], 1.0, -1.0)  # (s, num_labels)
    w = np.zeros((num_labels, aug.shape[1]))
    radius = 1.0 / np.sqrt(cfg.lam)
    for t in range(1, cfg.epochs + 1):
        eta = cfg.learning_rate / (cfg.lam * t)
        margins = aug @ w.T  # (s, num_labels)
        violating = (signs * margins) < 1.0
        mean_grad = (signs * violating).T @ aug / s
        w = (1.0 - eta * cfg.lam) * w + eta * mean_grad
        norms = np.linalg.norm(w, axis=1)
        scale = np.minimum(1.0, radius / np.maximum(norms, 1e-300))
        w *= scale[:, None]
    return w


def training_samples(
    features: np.ndarray, part: ProposalPartition, labels: LabelSet
) -> tuple[np.ndarray, np.ndarray]:
    """Labeled superpixels of annotated frames: track classes plus background."""
    idx: list[int] = []
    lab: list[int] = []
    for sp, cls in sorted(part.annotated.items()):
        idx.append(sp)
        lab.append(labels.label_of_class(cls))
    for sp in part.background_indices():
        idx.append(sp)
        lab.append(BACKGROUND)
    return features[np.asarray(idx, dtype=np.int64)], np.asarray(lab, dtype=np.int64)


def train_unary(
    features,
    part: ProposalPartition,
    labels: LabelSet,
    cfg: TrainConfig = TrainConfig(),
) -> UnaryModel:
    """Fit the per-label margin model on the annotated frames.

    Raises when any label (including background) has no training sample,
    listing the offenders.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[0] != part.n_superpixels:
        raise ValidationError(
            f"feature matrix has {np.shape(features)[0]} rows but the partition"
            f" covers {part.n_superpixels} superpixels"
        )
    x, y = training_samples(features, part, labels)
    return UnaryModel(fit_linear_svm(x, y, labels.num_labels, cfg), cfg)


def margins_of(model: UnaryModel, features) -> np.ndarray:
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2 or features.shape[1] != model.weights.shape[1] - 1:
        raise ValidationError(
            f"features must be (n, {model.weights.shape[1] - 1}), got {np.shape(features)}"
        )
    aug = np.hstack([features, np.ones((features.shape[0], 1))])
    return aug @ model.weights.T


def potentials_from_margins(margins, psi_max: float = PSI_MAX) -> np.ndarray:
    """Negative log softmax of per-label margins, clamped to [0, psi_max]."""
    margins = np.asarray(margins, dtype=np.float64)
    shifted = margins - margins.max(axis=1, keepdims=True)
    logz = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    return np.clip(logz - shifted, 0.0, psi_max)


def unary_potentials(model: UnaryModel, features, psi_max: float = PSI_MAX) -> np.ndarray:
    """The (n, num_labels) table of label costs for every superpixel."""
    return potentials_from_margins(margins_of(model, features), psi_max)


def pairwise_potential(score, beta: float):
    """exp(-score^2 / (2 beta)): cost 1 at score 0, falling as support grows."""
    if not (beta > 0.0):
        raise ValidationError(f"beta must be > 0, got {beta}")
    score = np.asarray(score, dtype=np.float64)
    out = np.exp(-(score**2) / (2.0 * beta))
    return float(out) if out.ndim == 0 else out


def _score_tensor(
    scores: ContextScores, pair_i: np.ndarray, pair_j: np.ndarray, num_labels: int
) -> np.ndarray:
    """Stack per-label-pair scores for a pair list; missing matrices read as 0."""
    tensor = np.zeros((pair_i.size, num_labels, num_labels))
    for (la, lb), mat in scores.per_pair.items():
        if not (0 <= la < num_labels and 0 <= lb < num_labels):
            raise ValidationError(f"score matrix for unknown label pair ({la}, {lb})")
        tensor[:, la, lb] = np.asarray(mat[pair_i, pair_j]).ravel()
    return tensor


def compute_beta(scores: ContextScores, pairs, num_labels: int) -> float:
    """Mean squared context score over the energy's (pair, label-pair) entries.

    Floored at ``BETA_FLOOR`` so an all-zero score set still yields a valid
    (maximally flat) potential.
    """
    pairs = np.asarray(pairs, dtype=np.int64)
    if pairs.size == 0:
        raise ValidationError("cannot set beta from an empty pair list")
    tensor = _score_tensor(scores, pairs[:, 0], pairs[:, 1], num_labels)
    return max(float(np.mean(tensor**2)), BETA_FLOOR)


@dataclass(frozen=True)
class PairTopology:
    """Which superpixel pairs carry a pairwise term.

    The default keeps the similarity-graph edges plus every pair whose
    propagated score reaches ``score_floor`` for any label pair.  ``dense``
    instead connects all pairs (guarded by ``max_dense_nodes``).
    """

    dense: bool = False
    score_floor: float = 1e-4
    max_dense_nodes: int = 2000

    def validate(self) -> None:
        if self.score_floor < 0.0:
            raise ValidationError(f"score_floor must be >= 0, got {self.score_floor}")
        if self.max_dense_nodes < 2:
            raise ValidationError(f"max_dense_nodes must be >= 2, got {self.max_dense_nodes}")


@dataclass
class EnergyModel:
    """Everything a labeling needs to be scored: unaries, pairs, pair scores, beta."""

    unary: np.ndarray  # (n, num_labels)
    pair_i: np.ndarray  # (p,)
    pair_j: np.ndarray  # (p,)
    pair_scores: np.ndarray  # (p, num_labels, num_labels)
    beta: float

    @property
    def num_nodes(self) -> int:
        return self.unary.shape[0]

    @property
    def num_labels(self) -> int:
        return self.unary.shape[1]


def assemble_energy(
    unary: np.ndarray,
    scores: ContextScores,
    topology: PairTopology = PairTopology(),
    graph=None,
) -> EnergyModel:
    """Build the energy model for a video's superpixels.

    Pairs come from the topology (graph edges and/or score support, or all
    pairs when dense); each gets the full label-pair score table, with 0 —
    the maximal penalty — for label pairs that received no score.  ``beta``
    is fixed here from exactly the entries the energy will use.
    """
    topology.validate()
    unary = np.asarray(unary, dtype=np.float64)
    if unary.ndim != 2:
        raise ValidationError(f"unary table must be 2-d, got shape {unary.shape}")
    if not np.all(np.isfinite(unary)) or unary.min() < 0.0:
        raise ValidationError("unary costs must be finite and >= 0")
    n, num_labels = unary.shape

    pair_set: set[tuple[int, int]] = set()
    if topology.dense:
        if n > topology.max_dense_nodes:
            raise ValidationError(
                f"dense topology limited to {topology.max_dense_nodes} nodes, got {n}"
            )
        pair_set.update((i, j) for i in range(n) for j in range(i + 1, n))
    else:
        if graph is not None:
            if graph.n != n:
                raise ValidationError(f"graph has {graph.n} nodes, unary table {n}")
            coo = graph.weights.tocoo()
            pair_set.update(
                (int(i), int(j)) for i, j in zip(coo.row, coo.col) if i < j
            )
        for mat in scores.per_pair.values():
            if mat.shape != (n, n):
                raise ValidationError(f"score matrix shape {mat.shape} does not match n={n}")
            coo = mat.tocoo()
            keep = coo.data >= topology.score_floor
            for i, j in zip(coo.row[keep], coo.col[keep]):
                if i != j:
                    pair_set.add((int(min(i, j)), int(max(i, j))))
        if not pair_set:
            raise ValidationError("no pairs: empty graph and no scores above the floor")

    pairs = np.asarray(sorted(pair_set), dtype=np.int64).reshape(-1, 2)
    pair_i, pair_j = pairs[:, 0], pairs[:, 1]
    tensor = _score_tensor(scores, pair_i, pair_j, num_labels)
    beta = max(float(np.mean(tensor**2)), BETA_FLOOR) if tensor.size else BETA_FLOOR
    return EnergyModel(unary, pair_i, pair_j, tensor, beta)


def energy_of(model: EnergyModel, labeling) -> float:
    """Total Gibbs energy of a labeling."""
    x = np.asarray(labeling, dtype=np.int64)
    if x.shape != (model.num_nodes,):
        raise ValidationError(f"labeling must have shape ({model.num_nodes},), got {x.shape}")
    if x.size and (x.min() < 0 or x.max() >= model.num_labels):
        raise ValidationError("labeling contains out-of-range labels")
    total = float(model.unary[np.arange(model.num_nodes), x].sum())
    if model.pair_i.size:
        s = model.pair_scores[np.arange(model.pair_i.size), x[model.pair_i], x[model.pair_j]]
        total += float(pairwise_potential(s, model.beta).sum())
    return total
