"""End-to-end orchestration: frames + detections + features -> labeled masks.

Input directory layout::

    frames/frame_*.pgm      grayscale frames (required)
    features.fmx            one row per superpixel, all frames concatenated
    detections.jsonl        per-frame scored boxes (required)
    maps/map_*.map          superpixel maps (optional; recomputed if absent)
    truth/mask_*.map        ground-truth masks (optional; enables evaluation)

The output directory receives every intermediate artifact (superpixel maps,
partition, graph, exemplars, scores, unary table), the final per-frame
label masks and overlays, the evaluation report when truth is available,
and ``manifest.json`` recording the configuration, content hashes of inputs
and outputs, and per-stage wall times.  Given identical inputs, config and
seed, every output hash is reproducible.
"""

from __future__ import annotations

import hashlib
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import io
from .config import PipelineConfig, thread_count
from .context import (
    LabelSet,
    PairingPolicy,
    build_link_matrices,
    extract_exemplars,
    write_exemplars,
)
from .crf import PairTopology, TrainConfig, assemble_energy, train_unary, unary_potentials
from .inference import alpha_expansion
from .propagation import PropagationConfig, compute_context_scores, write_scores
from .proposals import associate, filter_hypotheses, partition_superpixels, write_partition
from .report import evaluate_masks, overlay, write_report
from .simgraph import build_knn_graph, write_graph
from .superpixel import SegmentationParams, segment


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name and an exit category."""

    def __init__(self, stage: str, message: str, exit_code: int = 2):
        super().__init__(f"stage '{stage}': {message}")
        self.stage = stage
        self.exit_code = exit_code


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _hash_tree(root: Path, files) -> dict[str, str]:
    return {str(p.relative_to(root)): _sha256(p) for p in sorted(files)}


class _Timer:
    def __init__(self):
        self.timings: dict[str, float] = {}

    def stage(self, name: str):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()

            def __exit__(self, exc_type, exc, tb):
                timer.timings[name] = round(time.perf_counter() - self.t0, 6)
                return False

        return _Ctx()


def run_pipeline(input_dir, output_dir, cfg: PipelineConfig, threads: int | None = None) -> dict:
    """Run every stage; returns the manifest (also written to manifest.json)."""
    cfg.validate()
    inp = Path(input_dir)
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if threads is None:
        threads = thread_count()

    frame_paths = sorted((inp / "frames").glob("frame_*.pgm"))
    if not frame_paths:
        raise StageError("load", f"no frames under {inp / 'frames'}")
    if not (inp / "features.fmx").is_file():
        raise StageError("load", f"missing {inp / 'features.fmx'}")
    if not (inp / "detections.jsonl").is_file():
        raise StageError("load", f"missing {inp / 'detections.jsonl'}")

    timer = _Timer()
    manifest: dict = {"config": asdict(cfg), "threads": threads}

    with timer.stage("load"):
        frames = [io.read_pgm(p) for p in frame_paths]
        features = io.read_feature_matrix(inp / "features.fmx")
        detections = io.read_detections(inp / "detections.jsonl")
        input_files = list(frame_paths) + [inp / "features.fmx", inp / "detections.jsonl"]

    with timer.stage("superpixels"):
        map_paths = sorted((inp / "maps").glob("map_*.map"))
        if map_paths:
            if len(map_paths) != len(frames):
                raise StageError(
                    "superpixels", f"{len(map_paths)} maps for {len(frames)} frames"
                )
            maps = [io.read_label_map(p) for p in map_paths]
            input_files += map_paths
        else:
            params = SegmentationParams(cfg.sp_sigma, cfg.sp_k, cfg.sp_min_size)
            if threads > 1:
                with ThreadPoolExecutor(max_workers=threads) as pool:
                    maps = list(pool.map(lambda f: segment(f, params), frames))
            else:
                maps = [segment(f, params) for f in frames]
        (out / "maps").mkdir(exist_ok=True)
        for i, m in enumerate(maps):
            io.write_label_map(m, out / "maps" / f"map_{i:03d}.map")
        for f, m in zip(frames, maps):
            if f.shape != m.shape:
                raise StageError("superpixels", f"map shape {m.shape} != frame shape {f.shape}")
        total_sp = int(sum(m.max() + 1 for m in maps))
        if features.shape[0] != total_sp:
            raise StageError(
                "superpixels",
                f"feature matrix has {features.shape[0]} rows but the maps "
                f"define {total_sp} superpixels",
            )

    with timer.stage("proposals"):
        kept = filter_hypotheses(detections, cfg.min_confidence)
        tracks = associate(kept, cfg.iou_thresh, cfg.track_min_length, cfg.motion)
        if not tracks:
            raise StageError("proposals", "no track survived association")
        part = partition_superpixels(tracks, maps, cfg.cover_thresh)
        write_partition(part, tracks, out / "partition.json")

    with timer.stage("graph"):
        graph = build_knn_graph(io.normalize_rows(features), cfg.knn)
        write_graph(graph, out / "graph.bin")

    with timer.stage("context"):
        labels = LabelSet.from_partition(part)
        policy = PairingPolicy(cfg.cross_frame, cfg.max_pairs, cfg.seed)
        exemplars = extract_exemplars(part, labels, policy)
        write_exemplars(exemplars, out / "exemplars.json")
        links = build_link_matrices(exemplars, graph.n)

    with timer.stage("propagate"):
        prop_cfg = PropagationConfig(cfg.mu, cfg.tol, cfg.max_iter, cfg.solver, cfg.prune_eps)
        scores = compute_context_scores(graph, links, prop_cfg, cfg.normalize_scores)
        write_scores(scores, out / "scores.bin")
        if scores.non_converged:
            pairs = ", ".join(f"{p}@stage{s}" for p, s in scores.non_converged)
            raise StageError(
                "propagate", f"propagation did not converge for {pairs}", exit_code=3
            )

    with timer.stage("unary"):
        train_cfg = TrainConfig(cfg.svm_learning_rate, cfg.svm_epochs, cfg.svm_lambda, cfg.seed)
        model = train_unary(features, part, labels, train_cfg)
        unary = unary_potentials(model, features, cfg.psi_max)
        io.write_feature_matrix(unary, out / "unary.fmx")

    with timer.stage("labeling"):
        energy = assemble_energy(
            unary, scores, PairTopology(score_floor=cfg.score_floor), graph
        )
        result = alpha_expansion(energy, max_sweeps=cfg.max_sweeps)
        masks = []
        (out / "labels").mkdir(exist_ok=True)
        (out / "overlays").mkdir(exist_ok=True)
        for i, m in enumerate(maps):
            lo, hi = part.frame_ranges[i]
            mask = result.labeling[lo:hi][m].astype(np.int32)
            masks.append(mask)
            io.write_mask(mask, out / "labels" / f"label_{i:03d}.map")
            io.write_ppm(overlay(frames[i], mask), out / "overlays" / f"overlay_{i:03d}.ppm")
        manifest["energy"] = result.energy
        manifest["moves"] = result.moves
        manifest["expansion_converged"] = result.converged

    truth_paths = sorted((inp / "truth").glob("mask_*.map"))
    if truth_paths:
        with timer.stage("evaluate"):
            if len(truth_paths) != len(masks):
                raise StageError("evaluate", f"{len(truth_paths)} truth masks for {len(masks)} frames")
            truths = [io.read_mask(p) for p in truth_paths]
            input_files += truth_paths
            ev = evaluate_masks(masks, truths)
            write_report(ev, out)
            manifest["evaluation"] = {
                "average_iou": ev.average,
                "per_class": {str(k): v for k, v in sorted(ev.per_class.items())},
                "per_frame": ev.per_frame,
            }

    output_files = [p for p in out.rglob("*") if p.is_file() and p.name != "manifest.json"]
    manifest["inputs"] = _hash_tree(inp, input_files)
    manifest["outputs"] = _hash_tree(out, output_files)
    manifest["timings"] = timer.timings
    manifest["superpixels"] = total_sp
    manifest["tracks"] = len(tracks)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest
