#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Scoring, EER threshold selection, HTER reports, the cross-dataset protocol
and cue ablation runs.
"""

import os
import json
import logging
import dataclasses
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
import torch

from base import CueProvider
from config import LIVE, SPOOF, SPOOF_CUES
from corpus import CorpusIndex, FaceSample, ManifestRecord, load_sample, split_train_dev
from cue_sources import build_providers
from megc_net import BackboneConfig, MEGCNet
from trainer import SupervisionSource, TrainResult, batch_inputs, load_megc_checkpoint, train_megc
from utils.checkpoint import checkpoint_id
from utils.error_rates import as_scores, error_rate_curve, error_rate_intervals, error_rates_at
from utils.run_config import RunConfig, config_hash
from views.maps_view import write_map_panels
from views.report_view import format_report_table, write_html_report

logger = logging.getLogger(__name__)

GAP_TOLERANCE = 1e-12
MOIRE_VARIANTS = ('synthetic',)


@dataclass(frozen=True)
class EvalReport:
    far: float
    frr: float
    hter: float
    threshold: float
    n_live: int
    n_spoof: int

    def to_dict(self) -> Dict:
        return dataclasses.asdict(self)


@dataclass
class ProtocolResult:
    report: EvalReport
    dev_eer: float
    manifest: Dict
    run_dir: str
    scores: pd.DataFrame


def _model_for(model: Union[MEGCNet, str]) -> MEGCNet:
    if isinstance(model, str):
        model, _ = load_megc_checkpoint(model)
    return model


@torch.no_grad()
def score_samples(
    model: Union[MEGCNet, str],
    samples: Sequence[FaceSample],
    batch_size: int = 8,
) -> List[Tuple[str, float]]:
    """
    Softmax spoof probability of every sample

    Args:
        model: Trained model or checkpoint path
        samples: Prepared samples
        batch_size: Inference batch size (does not change the scores)

    Returns:
        List of (sample_id, score), score in [0, 1]
    """
    if not samples:
        return []
    model = _model_for(model)
    model.eval()
    results = []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        x = batch_inputs(chunk, model.config.input_size)
        probs = torch.softmax(model(x).logits, dim=1)[:, 1]
        results.extend((s.source_id, float(p)) for s, p in zip(chunk, probs))
    return results


def _require_both(live: np.ndarray, spoof: np.ndarray) -> None:
    if live.size == 0 or spoof.size == 0:
        raise ValueError(f"need live and spoof scores, got {live.size} live and {spoof.size} spoof")


def select_threshold(live_scores: Sequence[float], spoof_scores: Sequence[float]) -> float:
    """
    EER operating threshold on development scores

    Among the threshold intervals with the smallest |FAR - FRR|, those with
    the lowest mean error form the tie set; the midpoint of its first
    contiguous run of intervals is returned.

    Args:
        live_scores: Dev live scores
        spoof_scores: Dev spoof scores

    Returns:
        Threshold
    """
    live, spoof = as_scores(live_scores), as_scores(spoof_scores)
    _require_both(live, spoof)
    table = error_rate_intervals(live, spoof)
    best_gap = table['gap'].min()
    candidates = table[table['gap'] <= best_gap + GAP_TOLERANCE]
    best_mean = candidates['mean_error'].min()
    tied = candidates[candidates['mean_error'] <= best_mean + GAP_TOLERANCE].index.to_numpy()

    run_end = 0
    while run_end + 1 < len(tied) and tied[run_end + 1] == tied[run_end] + 1:
        run_end += 1
    lower = float(table.loc[tied[0], 'lower'])
    upper = float(table.loc[tied[run_end], 'upper'])
    return (lower + upper) / 2.0


def equal_error_rate(live_scores: Sequence[float], spoof_scores: Sequence[float]) -> Tuple[float, float]:
    """(eer, threshold) where eer is the mean of FAR and FRR at the selected threshold"""
    threshold = select_threshold(live_scores, spoof_scores)
    far, frr = error_rates_at(live_scores, spoof_scores, threshold)
    return (far + frr) / 2.0, threshold


def compute_hter(live_scores: Sequence[float], spoof_scores: Sequence[float], threshold: float) -> EvalReport:
    """FAR, FRR and HTER at a fixed threshold (score >= threshold means spoof)"""
    live, spoof = as_scores(live_scores), as_scores(spoof_scores)
    _require_both(live, spoof)
    far, frr = error_rates_at(live, spoof, threshold)
    return EvalReport(far=far, frr=frr, hter=(far + frr) / 2.0, threshold=float(threshold),
                      n_live=int(live.size), n_spoof=int(spoof.size))


def _iter_loaded(records: Sequence[ManifestRecord], chunk: int) -> Iterable[List[FaceSample]]:
    for start in range(0, len(records), chunk):
        yield [load_sample(r) for r in records[start:start + chunk]]


def score_index(model: MEGCNet, index: CorpusIndex, batch_size: int, video_level: bool = False) -> pd.DataFrame:
    """
    Score every record of an index

    Returns:
        DataFrame with columns sample_id, label, spoof_type, video_id, split, score
        (one row per video_id with the mean score when video_level is set)
    """
    by_id = {r.sample_id: r for r in index.samples}
    rows = []
    for samples in _iter_loaded(index.samples, max(batch_size, 32)):
        for sample_id, score in score_samples(model, samples, batch_size):
            r = by_id[sample_id]
            rows.append((sample_id, r.label, r.spoof_type, r.video_id or sample_id, index.split, score))
    df = pd.DataFrame(rows, columns=['sample_id', 'label', 'spoof_type', 'video_id', 'split', 'score'])
    if video_level and not df.empty:
        df = (df.groupby(['video_id', 'label', 'spoof_type', 'split'], as_index=False)['score'].mean()
                .assign(sample_id=lambda d: d['video_id']))
        df = df[['sample_id', 'label', 'spoof_type', 'video_id', 'split', 'score']]
    return df


def _class_scores(df: pd.DataFrame) -> Tuple[np.ndarray, np.ndarray]:
    return df.loc[df['label'] == LIVE, 'score'].to_numpy(), df.loc[df['label'] == SPOOF, 'score'].to_numpy()


def check_ablation(ablation: Iterable[str]) -> List[str]:
    ablation = sorted(set(ablation))
    if 'depth' in ablation:
        raise ValueError("the depth cue cannot be disabled")
    unknown = [c for c in ablation if c not in SPOOF_CUES]
    if unknown:
        raise ValueError(f"unknown cues to disable: {unknown} (allowed: {', '.join(SPOOF_CUES)})")
    return ablation


def split_source(index: CorpusIndex, fraction: float) -> Tuple[CorpusIndex, CorpusIndex]:
    """Train/dev split of a source corpus; composite records always stay in train"""
    originals = index.filter(lambda r: r.spoof_type != 'composite')
    composites = tuple(r for r in index.samples if r.spoof_type == 'composite')
    train, dev = split_train_dev(originals, fraction)
    return CorpusIndex(samples=train.samples + composites, split='train', root=index.root), dev


def evaluate_model(
    model: MEGCNet,
    dev_index: CorpusIndex,
    test_index: CorpusIndex,
    cfg: RunConfig,
    run_dir: str,
    manifest: Optional[Dict] = None,
    history: Optional[pd.DataFrame] = None,
) -> ProtocolResult:
    """
    Threshold on dev, HTER on test, and every report artefact in run_dir

    Writes scores.csv, report.jsonl, report.txt, report.html,
    run_manifest.json and (with eval.dump_maps) maps/ panels.
    """
    ev = cfg.eval
    dev_scores = score_index(model, dev_index, ev.batch_size, ev.video_level)
    test_scores = score_index(model, test_index, ev.batch_size, ev.video_level)

    dev_live, dev_spoof = _class_scores(dev_scores)
    dev_eer, threshold = equal_error_rate(dev_live, dev_spoof)
    test_live, test_spoof = _class_scores(test_scores)
    report = compute_hter(test_live, test_spoof, threshold)
    logger.info("Dev EER %.4f at threshold %.6f; test FAR %.4f FRR %.4f HTER %.4f",
                dev_eer, threshold, report.far, report.frr, report.hter)

    scores = pd.concat([dev_scores, test_scores], ignore_index=True)
    scores.to_csv(os.path.join(run_dir, 'scores.csv'), index=False)
    with open(os.path.join(run_dir, 'report.jsonl'), 'w', encoding='utf-8') as fh:
        fh.write(json.dumps({'split': 'dev', 'eer': dev_eer, 'threshold': threshold,
                             'n_live': int(dev_live.size), 'n_spoof': int(dev_spoof.size)}, sort_keys=True) + '\n')
        fh.write(json.dumps({'split': 'test', **report.to_dict()}, sort_keys=True) + '\n')

    manifest = dict(manifest or {})
    manifest.update({
        'config_hash': config_hash(cfg),
        'seed': cfg.seed,
        'ablation': list(cfg.train.disabled_cues),
        'threshold': threshold,
        'video_level': ev.video_level,
    })
    table = pd.DataFrame([{'ablation': ','.join(manifest['ablation']) or 'none', **report.to_dict()}])
    with open(os.path.join(run_dir, 'report.txt'), 'w', encoding='utf-8') as fh:
        fh.write(format_report_table(table) + '\n')
    write_html_report(
        os.path.join(run_dir, 'report.html'),
        test_scores, error_rate_curve(test_live, test_spoof), report, history,
    )
    with open(os.path.join(run_dir, 'run_manifest.json'), 'w', encoding='utf-8') as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)

    if ev.dump_maps:
        records = list(test_index.samples[:ev.max_dump])
        write_map_panels(model, [load_sample(r) for r in records], os.path.join(run_dir, 'maps'))
    return ProtocolResult(report=report, dev_eer=dev_eer, manifest=manifest, run_dir=run_dir, scores=scores)


def run_protocol(
    train_index: CorpusIndex,
    test_index: CorpusIndex,
    cfg: RunConfig,
    providers: Dict[str, Optional[CueProvider]],
    run_dir: str,
    ablation: Iterable[str] = (),
    dev_index: Optional[CorpusIndex] = None,
    model_config: Optional[BackboneConfig] = None,
) -> ProtocolResult:
    """
    Train on the source corpus with the given cues removed, fix the threshold
    on the source dev split and report HTER on the target corpus

    Args:
        train_index: Source corpus (split into train/dev unless dev_index is given)
        test_index: Target corpus
        cfg: Resolved RunConfig
        providers: Cue providers for supervision
        run_dir: Output directory
        ablation: Cues to remove (subset of reflection, moire, boundary)
        dev_index: Explicit development corpus
        model_config: Override of the backbone preset

    Returns:
        ProtocolResult
    """
    ablation = check_ablation(ablation)
    cfg = dataclasses.replace(cfg, train=dataclasses.replace(cfg.train, disabled_cues=ablation))
    if dev_index is None:
        train_part, dev_index = split_source(train_index, cfg.data.dev_fraction)
    else:
        train_part = train_index

    supervision = SupervisionSource.from_config(providers, cfg.cues, cfg.train)
    result: TrainResult = train_megc(
        train_part, supervision, cfg.train, run_dir,
        online_composites=cfg.cues.online_composites, model_config=model_config,
    )
    history = pd.DataFrame(result.history)
    manifest = {
        'checkpoint': os.path.abspath(result.checkpoint_path),
        'checkpoint_id': checkpoint_id(result.checkpoint_path),
        'steps': result.steps,
        'n_train': len(train_part),
        'n_dev': len(dev_index),
        'n_test': len(test_index),
        'moire_source': cfg.cues.moire,
    }
    return evaluate_model(result.model, dev_index, test_index, cfg, run_dir, manifest, history)


def ablation_table(results: Dict[str, ProtocolResult], models: Dict[str, MEGCNet]) -> pd.DataFrame:
    """One row per run: removed cue, error rates and parameter count"""
    rows = []
    for name, res in results.items():
        rows.append({
            'ablation': name,
            'params': sum(p.numel() for p in models[name].parameters()),
            **res.report.to_dict(),
            'dev_eer': res.dev_eer,
        })
    return pd.DataFrame(rows)


def run_ablation_sweep(
    train_index: CorpusIndex,
    test_index: CorpusIndex,
    cfg: RunConfig,
    providers: Dict[str, Optional[CueProvider]],
    run_dir: str,
    drops: Optional[Sequence[str]] = None,
    dev_index: Optional[CorpusIndex] = None,
    model_config: Optional[BackboneConfig] = None,
    moire_variants: Optional[Sequence[str]] = None,
) -> pd.DataFrame:
    """
    Full model, one run per removed cue, and one run per alternative moire
    supervision, each in its own sub-directory

    Args:
        drops: Cues to remove one at a time (every spoof cue when None)
        moire_variants: Alternative moire labelling runs named moire_<variant>;
            defaults to the synthetic variant for a full sweep and none otherwise

    Returns:
        Comparison DataFrame (also written to ablation.csv and ablation.txt)
    """
    if moire_variants is None:
        moire_variants = MOIRE_VARIANTS if drops is None else ()
    unknown = [v for v in moire_variants if v not in MOIRE_VARIANTS]
    if unknown:
        raise ValueError(f"unknown moire variants {unknown} (allowed: {', '.join(MOIRE_VARIANTS)})")

    runs = [('none', 'full', [], cfg, providers)]
    runs += [(cue, f"wo_{cue}", [cue], cfg, providers)
             for cue in (drops if drops is not None else SPOOF_CUES)]
    for variant in moire_variants:
        variant_cfg = dataclasses.replace(cfg, cues=dataclasses.replace(cfg.cues, moire=variant))
        variant_providers = dict(providers, moire=build_providers(variant_cfg.cues)['moire'])
        runs.append((f"moire_{variant}", f"moire_{variant}", [], variant_cfg, variant_providers))

    results, models = {}, {}
    for name, sub_name, ablation, run_cfg, run_providers in runs:
        sub_dir = os.path.join(run_dir, sub_name)
        os.makedirs(sub_dir, exist_ok=True)
        logger.info("Ablation run '%s'", name)
        results[name] = run_protocol(train_index, test_index, run_cfg, run_providers, sub_dir, ablation,
                                     dev_index=dev_index, model_config=model_config)
        models[name], _ = load_megc_checkpoint(results[name].manifest['checkpoint'])
    table = ablation_table(results, models)
    table.to_csv(os.path.join(run_dir, 'ablation.csv'), index=False)
    with open(os.path.join(run_dir, 'ablation.txt'), 'w', encoding='utf-8') as fh:
        fh.write(format_report_table(table) + '\n')
    return table
