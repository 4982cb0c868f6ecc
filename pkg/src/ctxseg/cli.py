"""Command-line interface.

Every pipeline stage is exposed as a subcommand working on files, plus
``pipeline`` to run everything and ``synth`` to build a toy input set.
Exit codes: 0 on success, 2 for validation or parse failures, 3 when an
iterative solve hits its cap without converging.
"""

from __future__ import annotations

import functools
import sys
from pathlib import Path

import click
import numpy as np

from . import io
from .config import PipelineConfig, load_config, merge_config, thread_count
from .context import (
    LabelSet,
    PairingPolicy,
    build_link_matrices,
    extract_exemplars,
    read_exemplars,
    write_exemplars,
)
from .crf import PairTopology, TrainConfig, assemble_energy, train_unary, unary_potentials
from .errors import NonConvergenceError, ValidationError
from .inference import alpha_expansion
from .pipeline import StageError, run_pipeline
from .propagation import (
    PropagationConfig,
    compute_context_scores,
    read_scores,
    write_scores,
)
from .proposals import (
    associate,
    filter_hypotheses,
    partition_superpixels,
    read_partition,
    write_partition,
)
from .report import evaluate_masks, write_report
from .simgraph import build_knn_graph, read_graph, write_graph
from .superpixel import SegmentationParams, segment
from .synth import SynthParams, generate

EXIT_VALIDATION = 2
EXIT_NO_CONVERGENCE = 3


def _guarded(fn):
    """Map exceptions to the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except NonConvergenceError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_NO_CONVERGENCE)
        except StageError as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(e.exit_code)
        except (ValidationError, OSError) as e:
            click.echo(f"error: {e}", err=True)
            sys.exit(EXIT_VALIDATION)

    return wrapper


@click.group()
def main():
    """Semantic video object labeling from propagated superpixel context."""


@main.command()
@click.option("--frame", "frame_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--sigma", default=0.5, show_default=True)
@click.option("--k", default=100.0, show_default=True)
@click.option("--min-size", default=20, show_default=True)
@_guarded
def superpixels(frame_path, out_path, sigma, k, min_size):
    """Segment one grayscale frame into superpixels."""
    img = io.read_pgm(frame_path)
    m = segment(img, SegmentationParams(sigma, k, min_size))
    io.write_label_map(m, out_path)
    click.echo(f"{int(m.max()) + 1} superpixels -> {out_path}")


@main.command()
@click.option("--dets", required=True, type=click.Path(exists=True))
@click.option("--maps", "maps_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--min-conf", default=0.5, show_default=True)
@click.option("--iou", default=0.5, show_default=True)
@click.option("--min-length", default=3, show_default=True)
@click.option("--motion", default="constant", type=click.Choice(["constant", "linear"]))
@click.option("--cover", default=0.5, show_default=True)
@_guarded
def propose(dets, maps_dir, out_path, min_conf, iou, min_length, motion, cover):
    """Filter detections, build tracks and split superpixels into sets."""
    records = io.read_detections(dets)
    maps = [io.read_label_map(p) for p in sorted(Path(maps_dir).glob("*.map"))]
    if not maps:
        raise ValidationError(f"no .map files under {maps_dir}")
    tracks = associate(filter_hypotheses(records, min_conf), iou, min_length, motion)
    part = partition_superpixels(tracks, maps, cover)
    write_partition(part, tracks, out_path)
    click.echo(
        f"{len(tracks)} tracks, {len(part.annotated)} annotated superpixels -> {out_path}"
    )


@main.command()
@click.option("--features", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--k", default=20, show_default=True)
@click.option("--normalize/--no-normalize", default=True, show_default=True)
@_guarded
def graph(features, out_path, k, normalize):
    """Build the k-NN similarity graph over feature rows."""
    f = io.read_feature_matrix(features)
    if normalize:
        f = io.normalize_rows(f)
    g = build_knn_graph(f, k)
    write_graph(g, out_path)
    click.echo(f"graph: {g.n} nodes, {g.weights.nnz // 2} edges -> {out_path}")


@main.command()
@click.option("--partition", "partition_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--cross-frame", is_flag=True, default=False)
@click.option("--max-pairs", default=10000, show_default=True)
@click.option("--seed", default=0, show_default=True)
@_guarded
def context(partition_path, out_path, cross_frame, max_pairs, seed):
    """Extract labeled exemplar pairs from the partition."""
    part, _tracks = read_partition(partition_path)
    labels = LabelSet.from_partition(part)
    exemplars = extract_exemplars(part, labels, PairingPolicy(cross_frame, max_pairs, seed))
    write_exemplars(exemplars, out_path)
    click.echo(f"{exemplars.total()} exemplar pairs -> {out_path}")


@main.command()
@click.option("--graph", "graph_path", required=True, type=click.Path(exists=True))
@click.option("--exemplars", "exemplars_path", required=True, type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--mu", default=0.99, show_default=True)
@click.option("--tol", default=1e-6, show_default=True)
@click.option("--max-iter", default=1000, show_default=True)
@click.option("--solver", default="direct", type=click.Choice(["iterative", "direct"]))
@click.option("--prune-eps", default=1e-8, show_default=True)
@click.option("--normalize/--no-normalize", default=True, show_default=True)
@_guarded
def propagate(graph_path, exemplars_path, out_path, mu, tol, max_iter, solver, prune_eps, normalize):
    """Diffuse the exemplar links over the graph, one run per label pair."""
    g = read_graph(graph_path)
    links = build_link_matrices(read_exemplars(exemplars_path), g.n)
    cfg = PropagationConfig(mu, tol, max_iter, solver, prune_eps)
    scores = compute_context_scores(g, links, cfg, normalize)
    write_scores(scores, out_path)
    if scores.non_converged:
        pairs = ", ".join(f"{p}@stage{s}" for p, s in scores.non_converged)
        raise NonConvergenceError(f"no convergence within {max_iter} iterations for {pairs}")
    click.echo(f"{len(scores.per_pair)} score matrices -> {out_path}")


@main.command(name="segment")
@click.option("--scores", "scores_path", required=True, type=click.Path(exists=True))
@click.option("--features", required=True, type=click.Path(exists=True))
@click.option("--partition", "partition_path", required=True, type=click.Path(exists=True))
@click.option("--maps", "maps_dir", required=True, type=click.Path(exists=True))
@click.option("--graph", "graph_path", type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--epochs", default=200, show_default=True)
@click.option("--lam", default=0.01, show_default=True)
@click.option("--score-floor", default=1e-4, show_default=True)
@click.option("--max-sweeps", default=10, show_default=True)
@_guarded
def segment_cmd(
    scores_path, features, partition_path, maps_dir, graph_path,
    out_dir, epochs, lam, score_floor, max_sweeps,
):
    """Train unaries, assemble the energy and label every superpixel."""
    feats = io.read_feature_matrix(features)
    part, _tracks = read_partition(partition_path)
    labels = LabelSet.from_partition(part)
    scores = read_scores(scores_path)
    maps = [io.read_label_map(p) for p in sorted(Path(maps_dir).glob("*.map"))]
    if len(maps) != len(part.frame_ranges):
        raise ValidationError(
            f"{len(maps)} maps but the partition covers {len(part.frame_ranges)} frames"
        )
    g = read_graph(graph_path) if graph_path else None
    model = train_unary(feats, part, labels, TrainConfig(epochs=epochs, lam=lam))
    unary = unary_potentials(model, feats)
    energy = assemble_energy(unary, scores, PairTopology(score_floor=score_floor), g)
    result = alpha_expansion(energy, max_sweeps=max_sweeps)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, m in enumerate(maps):
        lo, hi = part.frame_ranges[i]
        io.write_mask(result.labeling[lo:hi][m].astype(np.int32), out / f"label_{i:03d}.map")
    click.echo(f"energy {result.energy:.6f} after {result.moves} moves -> {out_dir}")


@main.command()
@click.option("--pred", "pred_dir", required=True, type=click.Path(exists=True))
@click.option("--truth", "truth_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@_guarded
def evaluate(pred_dir, truth_dir, out_dir):
    """Score predicted masks against ground truth; write the report files."""
    preds = [io.read_mask(p) for p in sorted(Path(pred_dir).glob("*.map"))]
    truths = [io.read_mask(p) for p in sorted(Path(truth_dir).glob("*.map"))]
    report = evaluate_masks(preds, truths)
    paths = write_report(report, out_dir)
    click.echo(f"average IoU {report.average:.4f}; wrote {', '.join(str(p) for p in paths)}")


def _config_options(fn):
    """Shared pipeline tuning flags (None = keep config-file/default value)."""
    for name in (
        "seed", "sp-sigma", "sp-k", "sp-min-size", "min-confidence", "iou-thresh",
        "track-min-length", "motion", "cover-thresh", "max-pairs", "knn", "mu",
        "tol", "max-iter", "solver", "prune-eps", "svm-learning-rate", "svm-epochs",
        "svm-lambda", "psi-max", "score-floor", "max-sweeps",
    ):
        kind = str if name in ("motion", "solver") else float
        if name in ("seed", "sp-min-size", "track-min-length", "max-pairs", "knn",
                    "max-iter", "svm-epochs", "max-sweeps"):
            kind = int
        fn = click.option(f"--{name}", default=None, type=kind)(fn)
    fn = click.option("--cross-frame", default=None, is_flag=True, flag_value=True)(fn)
    return fn


@main.command(name="pipeline")
@click.option("--in", "input_dir", required=True, type=click.Path(exists=True))
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--config", "config_path", type=click.Path(exists=True))
@_config_options
@_guarded
def pipeline_cmd(input_dir, out_dir, config_path, **flags):
    """Run all stages over an input directory."""
    cfg = load_config(config_path) if config_path else PipelineConfig()
    overrides = {k: v for k, v in flags.items() if v is not None}
    cfg = merge_config(cfg, overrides, source="command line")
    cfg.validate()
    manifest = run_pipeline(input_dir, out_dir, cfg, thread_count())
    line = f"pipeline done: {manifest['superpixels']} superpixels, {manifest['tracks']} tracks"
    if "evaluation" in manifest:
        line += f", average IoU {manifest['evaluation']['average_iou']:.4f}"
    click.echo(line)


@main.command()
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--frames", default=5, show_default=True)
@click.option("--width", default=64, show_default=True)
@click.option("--height", default=48, show_default=True)
@click.option("--seed", default=7, show_default=True)
@_guarded
def synth(out_dir, frames, width, height, seed):
    """Generate the synthetic two-object fixture."""
    info = generate(out_dir, SynthParams(frames=frames, width=width, height=height, seed=seed))
    click.echo(
        f"wrote {info['frames']} frames, {sum(info['superpixels'])} superpixels, "
        f"{info['detections']} detections -> {out_dir}"
    )


if __name__ == "__main__":
    main()
