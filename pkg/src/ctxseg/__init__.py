"""Semantic video object labeling from propagated superpixel context.

The pipeline: segment frames into superpixels, track detected object boxes
to split the superpixels into annotated and unlabeled sets, diffuse the
observed label co-occurrences over a feature-similarity graph, and decode
a per-superpixel labeling by minimizing a Gibbs energy whose pairwise
terms come from the diffused context scores.
"""

from .config import PipelineConfig, load_config, merge_config, save_config
from .context import ExemplarSet, LabelSet, LinkMatrix, PairingPolicy, extract_exemplars
from .crf import (
    EnergyModel,
    PairTopology,
    TrainConfig,
    UnaryModel,
    assemble_energy,
    compute_beta,
    energy_of,
    pairwise_potential,
    train_unary,
    unary_potentials,
)
from .errors import NonConvergenceError, ParseError, ValidationError
from .inference import ExpansionResult, FlowNetwork, alpha_expansion, expansion_move
from .io import DetectionRecord, read_feature_matrix, read_label_map, write_feature_matrix
from .pipeline import StageError, run_pipeline
from .propagation import (
    ContextScores,
    PropagationConfig,
    compute_context_scores,
    predict_links,
    propagate_labels,
)
from .proposals import ProposalPartition, Track, associate, box_iou, partition_superpixels
from .report import EvaluationReport, evaluate_masks
from .simgraph import SimilarityGraph, build_knn_graph
from .superpixel import SegmentationParams, segment
from .synth import SynthParams, generate

__version__ = "0.1.0"

__all__ = [
    "PipelineConfig", "load_config", "merge_config", "save_config",
    "ExemplarSet", "LabelSet", "LinkMatrix", "PairingPolicy", "extract_exemplars",
    "EnergyModel", "PairTopology", "TrainConfig", "UnaryModel", "assemble_energy",
    "compute_beta", "energy_of", "pairwise_potential", "train_unary", "unary_potentials",
    "NonConvergenceError", "ParseError", "ValidationError",
    "ExpansionResult", "FlowNetwork", "alpha_expansion", "expansion_move",
    "DetectionRecord", "read_feature_matrix", "read_label_map", "write_feature_matrix",
    "StageError", "run_pipeline",
    "ContextScores", "PropagationConfig", "compute_context_scores",
    "predict_links", "propagate_labels",
    "ProposalPartition", "Track", "associate", "box_iou", "partition_superpixels",
    "EvaluationReport", "evaluate_masks",
    "SimilarityGraph", "build_knn_graph",
    "SegmentationParams", "segment",
    "SynthParams", "generate",
    "__version__",
]
