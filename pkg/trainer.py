#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Training loop for the multi-cue classifier

Wires class-balanced batches, boundary composites, supervision bundles,
the network and the overall objective together, with per-step history
records, per-epoch checkpoints and exact resume.
"""

import os
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import pandas as pd
import torch
from tqdm import tqdm

from base import CueProvider
from config import LIVE, CUES, MOIRE_ALPHA, SYNTHETIC_MOIRE, SYNTHETIC_MOIRE_FRACTION
from corpus import (
    CorpusIndex, FaceSample, ManifestRecord, load_sample, balanced_record_batches,
)
from cue_synthesis import (
    MissingProviderError, SupervisionBundle, composite_boundary, default_paste_geometry,
    supervision_for_sample, synthetic_moire_sample, validity_for,
)
from megc_net import BackboneConfig, MEGCNet
from objectives import (
    LossBreakdown, classification_loss, labels_to_tensor, map_mse_loss, overall_loss,
)
from utils.checkpoint import load_checkpoint, restore_model, save_checkpoint
from utils.lru_cache import LRUCache
from utils.run_config import CueConfig, TrainConfig

logger = logging.getLogger(__name__)

HISTORY_FILE = 'history.jsonl'
CHECKPOINT_FILE = 'checkpoint.pt'
NAN_DUMP_FILE = 'nan_batch.json'
SAMPLE_CACHE_BYTES = 512 * 1024 ** 2


class NonFiniteLossError(RuntimeError):
    """Raised when the overall loss becomes NaN or infinite"""


@dataclass(frozen=True)
class SyntheticMoire:
    """Replace real replay moire supervision with synthetic moire composites of live crops"""
    alpha: float = MOIRE_ALPHA
    fraction: float = SYNTHETIC_MOIRE_FRACTION


class SupervisionSource:
    """Cue providers plus the rules that turn a FaceSample into a SupervisionBundle"""

    def __init__(
        self,
        providers: Dict[str, Optional[CueProvider]],
        enabled_cues: Sequence[str] = tuple(CUES),
        synthetic_moire: Optional[SyntheticMoire] = None,
    ):
        self.providers = providers
        self.enabled_cues = list(enabled_cues)
        self.synthetic_moire = synthetic_moire if 'moire' in self.enabled_cues else None

    @classmethod
    def from_config(cls, providers: Dict[str, Optional[CueProvider]], cues: CueConfig,
                    train: TrainConfig) -> 'SupervisionSource':
        synthetic = None
        if cues.moire == 'synthetic':
            synthetic = SyntheticMoire(cues.moire_alpha, cues.synthetic_moire_fraction)
        return cls(providers, train.enabled_cues, synthetic)

    @property
    def real_moire(self) -> bool:
        return self.synthetic_moire is None

    def required_cues(self, label: str, spoof_type: str, source_spoof_type: Optional[str]) -> List[str]:
        """Provider-backed cues a sample category needs"""
        if label == LIVE:
            needed = ['depth']
        else:
            needed = ['reflection']
            if validity_for(label, spoof_type, source_spoof_type, self.real_moire).moire:
                needed.append('moire')
        return [c for c in needed if c in self.enabled_cues]

    def check_resolvable(self, records: Sequence[ManifestRecord], online_composites: bool = False) -> None:
        """Fail before the first step when any category lacks a provider"""
        categories = {(r.label, r.spoof_type, r.source_spoof_type) for r in records}
        if online_composites:
            categories |= {('spoof', 'composite', r.spoof_type) for r in records
                           if r.label != LIVE and r.spoof_type != 'composite'}
        if self.synthetic_moire is not None:
            categories.add(('spoof', SYNTHETIC_MOIRE, None))
        for label, spoof_type, source in sorted(categories, key=str):
            for cue in self.required_cues(label, spoof_type, source):
                if self.providers.get(cue) is None:
                    raise MissingProviderError(cue, f"{label}/{spoof_type}")

    def bundle(self, sample: FaceSample) -> SupervisionBundle:
        return supervision_for_sample(
            sample,
            self.providers.get('depth'),
            self.providers.get('reflection'),
            self.providers.get('moire'),
            self.enabled_cues,
            self.real_moire,
        )


def sample_nbytes(sample: FaceSample) -> int:
    size = sample.image.nbytes
    for values in (sample.boundary_gt, sample.moire_gt):
        if values is not None:
            size += values.nbytes
    return size


class SampleCache:
    """Decoded samples keyed by sample_id, bounded by the bytes of their images and maps"""

    def __init__(self, loader: Callable[[ManifestRecord], FaceSample] = load_sample,
                 max_bytes: int = SAMPLE_CACHE_BYTES):
        self.loader = loader
        self._items: LRUCache[FaceSample] = LRUCache(max_bytes, sample_nbytes)

    def __len__(self) -> int:
        return len(self._items)

    @property
    def used_bytes(self) -> int:
        return self._items.used_bytes

    def __call__(self, record: ManifestRecord) -> FaceSample:
        return self._items.get_or_compute(record.sample_id, lambda: self.loader(record))


@dataclass
class TrainResult:
    model: MEGCNet
    history: List[Dict]
    checkpoint_path: str
    steps: int


def composite_slots(batch_size: int, fraction: float) -> int:
    """Number of spoof-half slots filled by boundary composites"""
    return int(round(fraction * (batch_size // 2)))


def build_model(config: TrainConfig, model_config: Optional[BackboneConfig] = None) -> MEGCNet:
    return MEGCNet(model_config or BackboneConfig.for_scale(config.desk_scale), config.enabled_cues)


def batch_inputs(samples: Sequence[FaceSample], input_size: int) -> torch.Tensor:
    """N x 6 x S x S input tensor; images are area-resized when the model input is smaller"""
    images = []
    for s in samples:
        image = s.image
        if image.shape[0] != input_size or image.shape[1] != input_size:
            image = cv2.resize(image, (input_size, input_size), interpolation=cv2.INTER_AREA)
        images.append(np.asarray(image, dtype=np.float32))
    return torch.from_numpy(np.stack(images)).permute(0, 3, 1, 2).contiguous()


def batch_targets(bundles: Sequence[SupervisionBundle], cues: Sequence[str]) -> Tuple[Dict, Dict]:
    maps = {c: torch.from_numpy(np.stack([b.map_for(c) for b in bundles]).astype(np.float32)) for c in cues}
    valid = {c: torch.tensor([getattr(b.validity, c) for b in bundles], dtype=torch.bool) for c in cues}
    return maps, valid


def check_batch(samples: Sequence[FaceSample], bundles: Sequence[SupervisionBundle]) -> None:
    """Class balance and validity rules, checked at every step"""
    n_live = sum(1 for s in samples if s.label == LIVE)
    if n_live * 2 != len(samples):
        raise AssertionError(f"unbalanced batch: {n_live} live of {len(samples)}")
    for s, b in zip(samples, bundles):
        if s.label == LIVE:
            if b.moire_gt.max() > 0 or b.boundary_gt.max() > 0 or b.reflection_gt.max() > 0:
                raise AssertionError(f"live sample {s.source_id} has nonzero spoof-cue supervision")
        else:
            replay_derived = s.spoof_type == 'replay' or (s.spoof_type == 'composite' and s.source_spoof_type == 'replay')
            if b.validity.moire and not (replay_derived or s.spoof_type == SYNTHETIC_MOIRE):
                raise AssertionError(f"non-replay spoof {s.source_id} would contribute to the moire loss")
            if b.validity.boundary and s.spoof_type != 'composite':
                raise AssertionError(f"original spoof {s.source_id} would contribute to the boundary loss")


def compute_losses(
    model: MEGCNet,
    x: torch.Tensor,
    labels: torch.Tensor,
    maps: Dict[str, torch.Tensor],
    valid: Dict[str, torch.Tensor],
    config: TrainConfig,
) -> Tuple[LossBreakdown, torch.Tensor]:
    """Forward pass and LossBreakdown; returns the logits as well"""
    out = model(x)
    predicted = out.aux.maps
    aux = {
        cue: map_mse_loss(predicted[cue], maps[cue].to(predicted[cue].dtype), valid[cue],
                          per_pixel_mean=config.per_pixel_mean,
                          normalize_by_valid=config.normalize_by_valid)
        for cue in model.enabled_cues
    }
    return overall_loss(classification_loss(out.logits, labels), aux, config.weights), out.logits


class _BatchPlanner:
    """
    Balanced record batches with composite slots, reproducible per (seed, epoch, step)

    The spoof half is filled from the back: boundary composites take the last
    slots, synthetic moire samples (when enabled) the slots just before them.
    """

    def __init__(
        self,
        index: CorpusIndex,
        config: TrainConfig,
        online_composites: bool,
        loader: SampleCache,
        synthetic_moire: Optional[SyntheticMoire] = None,
    ):
        self.config = config
        self.loader = loader
        self.base = index.filter(lambda r: r.spoof_type != 'composite')
        self.pool = [r for r in index.samples if r.spoof_type == 'composite']
        self.online = online_composites
        half = config.batch_size // 2
        slots = composite_slots(config.batch_size, config.composite_fraction)
        if slots and not self.pool and not online_composites:
            logger.warning("No boundary composites available; composite slots stay with original spoofs")
            slots = 0
        self.slots = slots
        self.synthetic_moire = synthetic_moire
        self.moire_slots = 0
        if synthetic_moire is not None:
            self.moire_slots = min(max(1, composite_slots(config.batch_size, synthetic_moire.fraction)),
                                   half - slots)
            if self.moire_slots < 1:
                logger.warning("Composite slots fill the spoof half; no room for synthetic moire samples")
        self.batches_per_epoch = len(balanced_record_batches(self.base, config.batch_size, config.seed, 0))

    def epoch_batches(self, epoch: int) -> List[List[ManifestRecord]]:
        return balanced_record_batches(self.base, self.config.batch_size, self.config.seed, epoch)

    def materialize(self, records: List[ManifestRecord], step: int, epoch: int) -> List[FaceSample]:
        if self.config.workers > 0:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                samples = list(pool.map(self.loader, records))
        else:
            samples = [self.loader(r) for r in records]
        half = self.config.batch_size // 2
        if self.slots:
            rng = np.random.default_rng([self.config.seed, epoch, step])
            for k in range(self.slots):
                slot = self.config.batch_size - 1 - k
                if self.pool:
                    samples[slot] = self.loader(self.pool[int(rng.integers(len(self.pool)))])
                else:
                    live = samples[k % half]
                    spoof = samples[slot]
                    seed = int(rng.integers(0, 2 ** 31 - 1))
                    samples[slot] = composite_boundary(live, spoof, default_paste_geometry(live, seed)).sample
        if self.moire_slots > 0:
            rng = np.random.default_rng([self.config.seed, epoch, step, 1])
            for k in range(self.moire_slots):
                slot = self.config.batch_size - 1 - self.slots - k
                seed = int(rng.integers(0, 2 ** 31 - 1))
                samples[slot] = synthetic_moire_sample(samples[k % half], seed, self.synthetic_moire.alpha)
        return samples


def _read_history(path: str, up_to_step: int) -> List[Dict]:
    if not os.path.isfile(path):
        return []
    with open(path, 'r', encoding='utf-8') as fh:
        records = [json.loads(line) for line in fh if line.strip()]
    return [r for r in records if r['step'] <= up_to_step]


def _write_history(path: str, records: List[Dict]) -> None:
    with open(path, 'w', encoding='utf-8') as fh:
        for r in records:
            fh.write(json.dumps(r, sort_keys=True) + '\n')


def checkpoint_config(model: MEGCNet, config: TrainConfig) -> Dict:
    return {'backbone': asdict(model.config), 'enabled_cues': list(model.enabled_cues), 'train': asdict(config)}


def load_megc_checkpoint(path: str) -> Tuple[MEGCNet, Dict]:
    """Rebuild a model from a checkpoint and return it with the payload"""
    payload = load_checkpoint(path, kind='megc')
    cfg = payload['config']
    model = MEGCNet(BackboneConfig(**cfg['backbone']), cfg['enabled_cues'])
    restore_model(model, payload)
    model.eval()
    return model, payload


def train_megc(
    index: CorpusIndex,
    supervision: SupervisionSource,
    config: TrainConfig,
    run_dir: str,
    online_composites: bool = False,
    model_config: Optional[BackboneConfig] = None,
    stop_at_step: Optional[int] = None,
    resume_from: Optional[str] = None,
    loader: Callable[[ManifestRecord], FaceSample] = load_sample,
) -> TrainResult:
    """
    Optimize the overall loss on class-balanced batches

    Args:
        index: Training corpus (composite records form the offline composite pool)
        supervision: Cue providers
        config: TrainConfig
        run_dir: Directory receiving history.jsonl and checkpoint.pt
        online_composites: Build composites on the fly from each batch
        model_config: Override of the desk/full backbone preset
        stop_at_step: Stop early (the LR schedule still spans the full run)
        resume_from: Checkpoint to continue from
        loader: Record -> FaceSample function

    Returns:
        TrainResult(model, history, checkpoint_path, steps)
    """
    config.validate()
    os.makedirs(run_dir, exist_ok=True)
    torch.manual_seed(config.seed)
    torch.use_deterministic_algorithms(True, warn_only=True)

    cache = SampleCache(loader)
    planner = _BatchPlanner(index, config, online_composites, cache, supervision.synthetic_moire)
    supervision.check_resolvable(index.samples, online_composites and planner.slots > 0)
    total_steps = config.max_steps or config.epochs * planner.batches_per_epoch

    model = build_model(config, model_config)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    if config.lr_schedule == 'cosine':
        scheduler = torch.optim.lr_scheduler.CosineAnnealingLR(optimizer, T_max=total_steps)
    else:
        scheduler = torch.optim.lr_scheduler.LambdaLR(optimizer, lambda _: 1.0)

    history_path = os.path.join(run_dir, HISTORY_FILE)
    checkpoint_path = os.path.join(run_dir, CHECKPOINT_FILE)
    step = 0
    if resume_from is not None:
        payload = load_checkpoint(resume_from, kind='megc')
        restore_model(model, payload)
        optimizer.load_state_dict(payload['optimizer'])
        scheduler.load_state_dict(payload['scheduler'])
        step = int(payload['extra']['step'])
        history = _read_history(history_path, step)
        _write_history(history_path, history)
        logger.info("Resumed from %s at step %d", resume_from, step)
    else:
        history = []
        _write_history(history_path, history)

    last_step = min(total_steps, stop_at_step) if stop_at_step is not None else total_steps
    model.train()
    progress = tqdm(total=last_step, initial=step, desc='train', leave=False)
    with open(history_path, 'a', encoding='utf-8') as hist_fh:
        while step < last_step:
            epoch = step // planner.batches_per_epoch
            batches = planner.epoch_batches(epoch)
            for within, records in enumerate(batches):
                global_step = epoch * planner.batches_per_epoch + within
                if global_step < step:
                    continue
                if step >= last_step:
                    break

                samples = planner.materialize(records, step, epoch)
                bundles = [supervision.bundle(s) for s in samples]
                check_batch(samples, bundles)
                x = batch_inputs(samples, model.config.input_size)
                maps, valid = batch_targets(bundles, model.enabled_cues)
                labels = labels_to_tensor([s.label for s in samples])

                breakdown, logits = compute_losses(model, x, labels, maps, valid, config)
                if not torch.isfinite(breakdown.total):
                    dump = os.path.join(run_dir, NAN_DUMP_FILE)
                    with open(dump, 'w', encoding='utf-8') as fh:
                        json.dump({'step': step + 1, 'epoch': epoch,
                                   'sample_ids': [s.source_id for s in samples],
                                   'losses': breakdown.to_record()}, fh, indent=2)
                    raise NonFiniteLossError(f"non-finite loss at step {step + 1}; batch ids written to {dump}")

                optimizer.zero_grad()
                breakdown.total.backward()
                optimizer.step()
                lr = optimizer.param_groups[0]['lr']
                scheduler.step()
                step += 1

                accuracy = float((logits.detach().argmax(dim=1) == labels).float().mean())
                record = {'step': step, 'epoch': epoch, 'lr': lr, 'accuracy': accuracy, **breakdown.to_record()}
                history.append(record)
                hist_fh.write(json.dumps(record, sort_keys=True) + '\n')
                hist_fh.flush()
                progress.update(1)
                progress.set_postfix(loss=f"{breakdown.l_overall:.4f}", acc=f"{accuracy:.2f}")

            epoch_done = step % planner.batches_per_epoch == 0
            if epoch_done or step >= last_step:
                save_checkpoint(
                    checkpoint_path, 'megc', model, optimizer, scheduler,
                    config=checkpoint_config(model, config),
                    extra={'step': step, 'epoch': epoch, 'total_steps': total_steps},
                )
                recent = history[-planner.batches_per_epoch:]
                if recent:
                    logger.info("Epoch %d done at step %d: mean loss %.4f, mean accuracy %.3f", epoch, step,
                                float(np.mean([r['l_overall'] for r in recent])),
                                float(np.mean([r['accuracy'] for r in recent])))
    progress.close()

    if step == 0 or not os.path.isfile(checkpoint_path):
        save_checkpoint(checkpoint_path, 'megc', model, optimizer, scheduler,
                        config=checkpoint_config(model, config),
                        extra={'step': step, 'epoch': step // planner.batches_per_epoch, 'total_steps': total_steps})
    model.eval()
    return TrainResult(model=model, history=history, checkpoint_path=checkpoint_path, steps=step)


def resume(
    checkpoint_path: str,
    index: CorpusIndex,
    supervision: SupervisionSource,
    config: TrainConfig,
    run_dir: str,
    **kwargs,
) -> TrainResult:
    """Continue a run from its checkpoint; history is appended"""
    if not os.path.isfile(checkpoint_path):
        raise FileNotFoundError(f"Checkpoint not found: {checkpoint_path}")
    return train_megc(index, supervision, config, run_dir, resume_from=checkpoint_path, **kwargs)


def smoothed(values: Sequence[float], window: int) -> np.ndarray:
    """Trailing moving average (shorter windows at the start)"""
    return pd.Series(list(values), dtype=float).rolling(window, min_periods=1).mean().to_numpy()
