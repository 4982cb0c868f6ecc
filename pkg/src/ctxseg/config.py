"""Pipeline configuration: one flat table of every stage's knobs.

Values resolve with command-line flag > config file > built-in default.
The file format is TOML restricted to top-level scalar keys, e.g.::

    mu = 0.99
    solver = "direct"
    sp_k = 100.0

``CTX_THREADS`` (environment) caps worker threads for the per-frame
stages; it is read at pipeline start, defaulting to 1.
"""

from __future__ import annotations

import os
from dataclasses import asdict, dataclass, fields
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .errors import ParseError, ValidationError


@dataclass
class PipelineConfig:
    seed: int = 0
    # superpixels
    sp_sigma: float = 0.5
    sp_k: float = 100.0
    sp_min_size: int = 20
    # proposals
    min_confidence: float = 0.5
    iou_thresh: float = 0.5
    track_min_length: int = 3
    motion: str = "constant"
    cover_thresh: float = 0.5
    # exemplar pairing
    cross_frame: bool = False
    max_pairs: int = 10000
    # similarity graph
    knn: int = 20
    # propagation
    mu: float = 0.99
    tol: float = 1e-6
    max_iter: int = 1000
    solver: str = "direct"
    prune_eps: float = 1e-8
    normalize_scores: bool = True
    # unary training
    svm_learning_rate: float = 1.0
    svm_epochs: int = 200
    svm_lambda: float = 0.01
    # energy
    psi_max: float = 20.0
    score_floor: float = 1e-4
    max_sweeps: int = 10

    def validate(self) -> None:
        # stage-level constructors re-check their own slices; this catches
        # file-level nonsense early with the offending key named.
        positive = ("sp_k", "tol", "svm_learning_rate", "svm_lambda", "psi_max")
        for name in positive:
            if not (getattr(self, name) > 0):
                raise ValidationError(f"config key '{name}' must be > 0")
        at_least_one = ("sp_min_size", "track_min_length", "knn", "max_iter", "svm_epochs", "max_sweeps")
        for name in at_least_one:
            if getattr(self, name) < 1:
                raise ValidationError(f"config key '{name}' must be >= 1")
        for name in ("min_confidence", "iou_thresh", "cover_thresh"):
            if not (0.0 <= getattr(self, name) <= 1.0):
                raise ValidationError(f"config key '{name}' must be in [0, 1]")
        if not (0.0 <= self.mu < 1.0):
            raise ValidationError("config key 'mu' must satisfy 0 <= mu < 1")
        if self.sp_sigma < 0 or self.prune_eps < 0 or self.score_floor < 0:
            raise ValidationError("'sp_sigma', 'prune_eps' and 'score_floor' must be >= 0")
        if self.solver not in ("iterative", "direct"):
            raise ValidationError(f"config key 'solver' must be 'iterative' or 'direct', got '{self.solver}'")
        if self.motion not in ("constant", "linear"):
            raise ValidationError(f"config key 'motion' must be 'constant' or 'linear', got '{self.motion}'")
        if self.max_pairs < 2:
            raise ValidationError("config key 'max_pairs' must be >= 2")


def load_config(path) -> PipelineConfig:
    """Read a TOML config file; unknown keys and wrong types are errors."""
    try:
        with open(path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ParseError(f"{path}: {e}") from None
    cfg = merge_config(PipelineConfig(), data, source=str(path))
    cfg.validate()
    return cfg


def merge_config(base: PipelineConfig, overrides: dict, source: str = "override") -> PipelineConfig:
    """Apply a key -> value mapping on top of ``base`` (None values are skipped)."""
    values = asdict(base)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in values:
            raise ValidationError(f"{source}: unknown config key '{key}'")
        current = values[key]
        if isinstance(current, bool):
            if not isinstance(value, bool):
                raise ValidationError(f"{source}: key '{key}' expects a boolean")
        elif isinstance(current, int):
            if not isinstance(value, int) or isinstance(value, bool):
                raise ValidationError(f"{source}: key '{key}' expects an integer")
        elif isinstance(current, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ValidationError(f"{source}: key '{key}' expects a number")
            value = float(value)
        elif isinstance(current, str):
            if not isinstance(value, str):
                raise ValidationError(f"{source}: key '{key}' expects a string")
        values[key] = value
    return PipelineConfig(**values)


def save_config(cfg: PipelineConfig, path) -> None:
    """Write the flat TOML form (stable key order, round-trips through load)."""
    lines = []
    for f in fields(PipelineConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, bool):
            lines.append(f"{f.name} = {'true' if v else 'false'}")
        elif isinstance(v, str):
            lines.append(f'{f.name} = "{v}"')
        elif isinstance(v, float):
            lines.append(f"{f.name} = {v!r}")
        else:
            lines.append(f"{f.name} = {v}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def thread_count(env=os.environ) -> int:
    """Worker threads for per-frame stages, from ``CTX_THREADS`` (default 1)."""
    raw = env.get("CTX_THREADS")
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"CTX_THREADS must be an integer, got '{raw}'") from None
    if n < 1:
        raise ValidationError(f"CTX_THREADS must be >= 1, got {n}")
    return n
