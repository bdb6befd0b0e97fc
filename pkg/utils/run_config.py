#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Run configuration: JSON config files loaded into nested dataclasses,
canonical hashing and hash-named run directories.
"""

import os
import json
import hashlib
import logging
import dataclasses
from dataclasses import dataclass, field, asdict
from typing import Any, Dict, List, Optional, get_type_hints

from config import (
    CUES, SPOOF_CUES, DEV_FRACTION, MOIRE_ALPHA, SYNTHETIC_MOIRE_FRACTION, MAP_SIZE,
    MOIRE_BACKBONE_WIDTHS, MOIRE_ADAPT_WIDTH, MOIRE_REFINE_WIDTH,
    DEFAULT_LEARNING_RATE, DEFAULT_BATCH_SIZE, DEFAULT_COMPOSITE_FRACTION,
    SMOKE_TEST_STEPS, RUN_DIR_ENV, DEFAULT_RUN_ROOT,
)
from objectives import LossWeights

logger = logging.getLogger(__name__)

DEPTH_SOURCES = ['dome', 'files']
REFLECTION_SOURCES = ['zeros', 'files']
MOIRE_SOURCES = ['moire_net', 'residual', 'files', 'synthetic']
LR_SCHEDULES = ['cosine', 'constant']


class ConfigError(ValueError):
    """Raised for unknown keys or invalid values in a run config"""


@dataclass
class DataConfig:
    train_manifest: str = ''
    test_manifest: Optional[str] = None
    dev_manifest: Optional[str] = None
    dev_fraction: float = DEV_FRACTION
    workers: int = 0

    def validate(self) -> None:
        if not 0.0 < self.dev_fraction < 1.0:
            raise ConfigError(f"data.dev_fraction must lie in (0, 1), got {self.dev_fraction}")
        if self.workers < 0:
            raise ConfigError(f"data.workers must be >= 0, got {self.workers}")


@dataclass
class CueConfig:
    depth: str = 'dome'
    reflection: str = 'zeros'
    moire: str = 'moire_net'
    cue_dir: Optional[str] = None
    moire_checkpoint: Optional[str] = None
    moire_alpha: float = MOIRE_ALPHA
    synthetic_moire_fraction: float = SYNTHETIC_MOIRE_FRACTION
    online_composites: bool = False
    composites_per_spoof: int = 1
    pairs_per_live: int = 2

    def validate(self) -> None:
        for key, allowed in (('depth', DEPTH_SOURCES), ('reflection', REFLECTION_SOURCES), ('moire', MOIRE_SOURCES)):
            if getattr(self, key) not in allowed:
                raise ConfigError(f"cues.{key} must be one of {', '.join(allowed)}, got {getattr(self, key)!r}")
        if not 0.0 < self.moire_alpha <= 1.0:
            raise ConfigError(f"cues.moire_alpha must lie in (0, 1], got {self.moire_alpha}")
        if not 0.0 < self.synthetic_moire_fraction <= 1.0:
            raise ConfigError(f"cues.synthetic_moire_fraction must lie in (0, 1], got {self.synthetic_moire_fraction}")
        if self.composites_per_spoof < 0 or self.pairs_per_live < 1:
            raise ConfigError("cues.composites_per_spoof must be >= 0 and cues.pairs_per_live >= 1")


@dataclass
class MoireNetConfig:
    """Demoire backbone plugin plus the two-layer adaptation and refinement stages"""
    demoire_backbone: str = 'encoder_decoder'
    backbone_widths: List[int] = field(default_factory=lambda: list(MOIRE_BACKBONE_WIDTHS))
    adapt_width: int = MOIRE_ADAPT_WIDTH
    refine_width: int = MOIRE_REFINE_WIDTH
    freeze_backbone: bool = True
    refine_with_input: bool = False
    output_size: int = MAP_SIZE

    def validate(self) -> None:
        if self.adapt_width < 1 or self.refine_width < 1 or any(w < 1 for w in self.backbone_widths):
            raise ConfigError("moire_net widths must be positive")
        if self.output_size != MAP_SIZE:
            raise ConfigError(f"moire_net.output_size must be {MAP_SIZE}")


@dataclass
class MoireTrainSettings:
    steps: int = SMOKE_TEST_STEPS
    pretrain_steps: int = SMOKE_TEST_STEPS
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = 1e-3
    seed: int = 0

    def validate(self) -> None:
        if self.steps < 1 or self.pretrain_steps < 0 or self.batch_size < 1 or self.lr <= 0:
            raise ConfigError("moire_train: steps >= 1, pretrain_steps >= 0, batch_size >= 1 and lr > 0 required")


@dataclass
class TrainConfig:
    epochs: int = 1
    max_steps: Optional[int] = None
    batch_size: int = DEFAULT_BATCH_SIZE
    lr: float = DEFAULT_LEARNING_RATE
    lr_schedule: str = 'cosine'
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    desk_scale: bool = False
    composite_fraction: float = DEFAULT_COMPOSITE_FRACTION
    disabled_cues: List[str] = field(default_factory=list)
    per_pixel_mean: bool = False
    normalize_by_valid: bool = False
    workers: int = 0

    @property
    def enabled_cues(self) -> List[str]:
        return [c for c in CUES if c not in self.disabled_cues]

    def validate(self) -> None:
        if self.batch_size <= 0 or self.batch_size % 2 != 0:
            raise ConfigError(f"train.batch_size must be a positive even integer, got {self.batch_size}")
        if not 0.0 <= self.composite_fraction <= 1.0:
            raise ConfigError(f"train.composite_fraction must lie in [0, 1], got {self.composite_fraction}")
        if self.epochs < 1 or (self.max_steps is not None and self.max_steps < 1):
            raise ConfigError("train.epochs and train.max_steps must be >= 1")
        if self.lr <= 0:
            raise ConfigError(f"train.lr must be positive, got {self.lr}")
        if self.lr_schedule not in LR_SCHEDULES:
            raise ConfigError(f"train.lr_schedule must be one of {', '.join(LR_SCHEDULES)}")
        if 'depth' in self.disabled_cues:
            raise ConfigError("the depth cue cannot be disabled")
        bad = [c for c in self.disabled_cues if c not in SPOOF_CUES]
        if bad:
            raise ConfigError(f"unknown cues in train.disabled_cues: {bad} (allowed: {', '.join(SPOOF_CUES)})")


@dataclass
class EvalConfig:
    checkpoint: Optional[str] = None
    batch_size: int = DEFAULT_BATCH_SIZE
    video_level: bool = False
    dump_maps: bool = False
    max_dump: int = 16

    def validate(self) -> None:
        if self.batch_size < 1 or self.max_dump < 0:
            raise ConfigError("eval.batch_size must be >= 1 and eval.max_dump >= 0")


@dataclass
class RunConfig:
    seed: int = 0
    data: DataConfig = field(default_factory=DataConfig)
    cues: CueConfig = field(default_factory=CueConfig)
    moire_net: MoireNetConfig = field(default_factory=MoireNetConfig)
    moire_train: MoireTrainSettings = field(default_factory=MoireTrainSettings)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self) -> 'RunConfig':
        for section in (self.data, self.cues, self.moire_net, self.moire_train, self.train, self.eval):
            section.validate()
        return self

    def with_seed(self, seed: int) -> 'RunConfig':
        """Copy with the seed propagated into every seeded section"""
        return dataclasses.replace(
            self,
            seed=seed,
            train=dataclasses.replace(self.train, seed=seed),
            moire_train=dataclasses.replace(self.moire_train, seed=seed),
        )

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _build(cls, data: Any, where: str):
    """Recursively build a config dataclass from parsed JSON"""
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'} must be an object")
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = key if key in names else f"{key}_"
        if name not in names:
            raise ConfigError(f"unknown key '{where + '.' if where else ''}{key}'")
        hint = hints[name]
        if dataclasses.is_dataclass(hint):
            kwargs[name] = _build(hint, value, f"{where + '.' if where else ''}{key}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where or 'config'}: {e}") from e


def _resolve_path(base_dir: str, path: Optional[str]) -> Optional[str]:
    if not path:
        return path
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def config_from_dict(data: Dict[str, Any], base_dir: str = '.') -> RunConfig:
    """
    Build and validate a RunConfig from a parsed JSON object

    Relative file paths are resolved against base_dir. A top-level seed
    propagates into the training and moire sections.
    """
    cfg = _build(RunConfig, data, '')
    if 'seed' in data:
        cfg = cfg.with_seed(int(cfg.seed))
    cfg.data.train_manifest = _resolve_path(base_dir, cfg.data.train_manifest)
    cfg.data.test_manifest = _resolve_path(base_dir, cfg.data.test_manifest)
    cfg.data.dev_manifest = _resolve_path(base_dir, cfg.data.dev_manifest)
    cfg.cues.cue_dir = _resolve_path(base_dir, cfg.cues.cue_dir)
    cfg.cues.moire_checkpoint = _resolve_path(base_dir, cfg.cues.moire_checkpoint)
    cfg.eval.checkpoint = _resolve_path(base_dir, cfg.eval.checkpoint)
    try:
        return cfg.validate()
    except (TypeError, ValueError) as e:
        if isinstance(e, ConfigError):
            raise
        raise ConfigError(str(e)) from e


def load_run_config(path: str) -> RunConfig:
    """Load a JSON run config file"""
    if not os.path.isfile(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path, 'r', encoding='utf-8') as fh:
            data = json.load(fh)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON ({e.msg}, line {e.lineno})") from e
    return config_from_dict(data, os.path.dirname(os.path.abspath(path)))


def config_hash(cfg: RunConfig) -> str:
    """sha256 of the canonical JSON form"""
    canonical = json.dumps(cfg.to_dict(), sort_keys=True, separators=(',', ':'))
    return hashlib.sha256(canonical.encode('utf-8')).hexdigest()


def run_root() -> str:
    return os.environ.get(RUN_DIR_ENV) or DEFAULT_RUN_ROOT


def prepare_run_dir(command: str, cfg: RunConfig, suffix: str = '') -> str:
    """
    Create <root>/<command>-<hash12>[-suffix] and write the resolved config into it

    Args:
        command: CLI command name
        cfg: Resolved RunConfig
        suffix: Optional extra name part (ablation runs)

    Returns:
        Run directory path
    """
    name = f"{command}-{config_hash(cfg)[:12]}"
    if suffix:
        name = f"{name}-{suffix}"
    run_dir = os.path.join(run_root(), name)
    os.makedirs(run_dir, exist_ok=True)
    with open(os.path.join(run_dir, 'config.json'), 'w', encoding='utf-8') as fh:
        json.dump(cfg.to_dict(), fh, indent=2, sort_keys=True)
        fh.write('\n')
    logger.info("Run directory: %s", run_dir)
    return run_dir
