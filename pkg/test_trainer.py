#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Tests for the multi-cue training loop"""

import os
import json
from dataclasses import replace

import numpy as np
import pytest
import torch

from corpus import load_sample
from cue_sources import DomeDepthProvider, SyntheticMoireProvider, ZeroMapProvider
from cue_synthesis import MissingProviderError, supervision_for_sample
from objectives import LossWeights, labels_to_tensor
from trainer import (
    NAN_DUMP_FILE, NonFiniteLossError, SampleCache, SupervisionSource, SyntheticMoire, batch_inputs,
    check_batch, composite_slots, load_megc_checkpoint, resume, smoothed, train_megc,
)
from utils.checkpoint import CheckpointMismatchError
from utils.run_config import CueConfig, TrainConfig
from conftest import ConstantMapProvider, small_backbone


def _config(**changes):
    base = TrainConfig(max_steps=4, batch_size=4, lr=1e-3, composite_fraction=0.0)
    return replace(base, **changes)


def _run(index, providers, run_dir, config=None, **kwargs):
    config = config or _config()
    return train_megc(index, SupervisionSource(providers, config.enabled_cues), config, str(run_dir),
                      model_config=small_backbone(), **kwargs)


class TestSupervisionSource:

    def test_missing_moire_provider(self, toy_index):
        source = SupervisionSource({'depth': DomeDepthProvider(), 'reflection': ZeroMapProvider('reflection')})
        with pytest.raises(MissingProviderError) as err:
            source.check_resolvable(toy_index.samples)
        assert err.value.cue == 'moire'

    def test_disabled_cue_needs_no_provider(self, toy_index):
        source = SupervisionSource({'depth': DomeDepthProvider(), 'reflection': ZeroMapProvider('reflection')},
                                   enabled_cues=['depth', 'reflection', 'boundary'])
        source.check_resolvable(toy_index.samples)

    def test_online_composites_inherit_replay(self, toy_index):
        records = [r for r in toy_index.samples if r.spoof_type != 'replay']
        source = SupervisionSource({'depth': DomeDepthProvider(), 'reflection': ZeroMapProvider('reflection')})
        source.check_resolvable(records, online_composites=True)

    def test_synthetic_moire_replaces_replay_supervision(self, toy_index):
        providers = {'depth': DomeDepthProvider(), 'reflection': ZeroMapProvider('reflection'),
                     'moire': SyntheticMoireProvider()}
        source = SupervisionSource.from_config(providers, CueConfig(moire='synthetic'), TrainConfig())
        assert not source.real_moire
        source.check_resolvable(toy_index.samples)
        replay = load_sample(next(r for r in toy_index.spoof if r.spoof_type == 'replay'))
        bundle = source.bundle(replay)
        assert not bundle.validity.moire
        assert bundle.moire_gt.max() == 0

    def test_synthetic_moire_off_when_cue_disabled(self):
        source = SupervisionSource.from_config({}, CueConfig(moire='synthetic'), TrainConfig(disabled_cues=['moire']))
        assert source.synthetic_moire is None and source.real_moire


class TestCheckBatch:

    def _pair(self, toy_index, providers):
        live = load_sample(toy_index.live[0])
        spoof = load_sample(toy_index.spoof[0])
        source = SupervisionSource(providers)
        return [live, spoof], [source.bundle(live), source.bundle(spoof)]

    def test_balanced_batch_passes(self, toy_index, providers):
        check_batch(*self._pair(toy_index, providers))

    def test_unbalanced_batch(self, toy_index, providers):
        samples, bundles = self._pair(toy_index, providers)
        with pytest.raises(AssertionError, match='unbalanced'):
            check_batch(samples[:1] + samples, bundles[:1] + bundles)

    def test_live_with_moire_supervision(self, toy_index, providers):
        samples, bundles = self._pair(toy_index, providers)
        bundles[0] = replace(bundles[0], moire_gt=np.full((32, 32), 0.5, np.float32))
        with pytest.raises(AssertionError, match='nonzero spoof-cue'):
            check_batch(samples, bundles)

    def test_print_with_moire_validity(self, toy_index, providers):
        samples, bundles = self._pair(toy_index, providers)
        assert samples[1].spoof_type == 'print'
        bundles[1] = replace(bundles[1], validity=bundles[1].validity._replace(moire=True))
        with pytest.raises(AssertionError, match='moire loss'):
            check_batch(samples, bundles)


def test_composite_slots():
    assert composite_slots(8, 0.25) == 1
    assert composite_slots(16, 0.25) == 2
    assert composite_slots(8, 0.0) == 0


class TestTraining:

    def test_short_run_writes_history_and_checkpoint(self, toy_index, providers, tmp_path):
        result = _run(toy_index, providers, tmp_path)
        assert result.steps == 4
        assert [r['step'] for r in result.history] == [1, 2, 3, 4]
        with open(os.path.join(str(tmp_path), 'history.jsonl'), encoding='utf-8') as fh:
            lines = [json.loads(line) for line in fh]
        assert lines == result.history
        assert os.path.isfile(result.checkpoint_path)
        for record in result.history:
            aux = record['l_d'] + record['l_r'] + record['l_m'] + record['l_b']
            assert record['l_overall'] == pytest.approx(10.0 * record['l_cls'] + 0.1 * aux, rel=1e-6)
            assert record['n_d'] == 4
            assert 0.0 <= record['accuracy'] <= 1.0

    def test_disabled_cue_absent_from_history(self, toy_index, providers, tmp_path):
        result = _run(toy_index, providers, tmp_path, _config(disabled_cues=['moire'], max_steps=2))
        assert all('l_m' not in r for r in result.history)
        assert 'moire' not in result.model.enabled_cues

    def test_deterministic(self, toy_index, providers, tmp_path):
        a = _run(toy_index, providers, tmp_path / 'a')
        b = _run(toy_index, providers, tmp_path / 'b')
        assert a.history == b.history
        state_a, state_b = a.model.state_dict(), b.model.state_dict()
        assert all(torch.equal(state_a[k], state_b[k]) for k in state_a)

    def test_resume_matches_uninterrupted(self, toy_index, providers, tmp_path):
        config = _config(max_steps=6)
        full = _run(toy_index, providers, tmp_path / 'full', config)
        partial = _run(toy_index, providers, tmp_path / 'split', config, stop_at_step=3)
        assert partial.steps == 3
        resumed = resume(partial.checkpoint_path, toy_index, SupervisionSource(providers), config,
                         str(tmp_path / 'split'), model_config=small_backbone())
        assert resumed.steps == 6
        assert resumed.history == full.history
        state_full, state_resumed = full.model.state_dict(), resumed.model.state_dict()
        assert state_full.keys() == state_resumed.keys()
        for key in state_full:
            assert torch.equal(state_full[key], state_resumed[key]), key

    def test_resume_with_other_scale(self, toy_index, providers, tmp_path):
        config = _config(max_steps=2, desk_scale=True)
        source = SupervisionSource(providers)
        partial = train_megc(toy_index, source, config, str(tmp_path), stop_at_step=1)
        with pytest.raises(CheckpointMismatchError):
            resume(partial.checkpoint_path, toy_index, source, replace(config, desk_scale=False), str(tmp_path))

    def test_resume_missing_checkpoint(self, toy_index, providers, tmp_path):
        with pytest.raises(FileNotFoundError):
            resume(str(tmp_path / 'absent.pt'), toy_index, SupervisionSource(providers), _config(), str(tmp_path))

    def test_non_finite_loss(self, toy_index, providers, tmp_path):
        def loader(record):
            sample = load_sample(record)
            return replace(sample, image=np.full_like(sample.image, np.nan))

        with pytest.raises(NonFiniteLossError, match='step 1'):
            _run(toy_index, providers, tmp_path, loader=loader)
        with open(os.path.join(str(tmp_path), NAN_DUMP_FILE), encoding='utf-8') as fh:
            dump = json.load(fh)
        assert dump['step'] == 1
        assert len(dump['sample_ids']) == 4

    def test_online_composites_supervise_boundary(self, toy_index, providers, tmp_path):
        result = _run(toy_index, providers, tmp_path, _config(composite_fraction=0.5, max_steps=2),
                      online_composites=True)
        # two live samples plus one composite per batch
        assert all(r['n_b'] == 3 for r in result.history)

    def test_synthetic_moire_run(self, toy_index, tmp_path):
        providers = {'depth': DomeDepthProvider(), 'reflection': ZeroMapProvider('reflection'),
                     'moire': SyntheticMoireProvider()}
        config = _config(max_steps=3)
        source = SupervisionSource(providers, config.enabled_cues, SyntheticMoire())
        result = train_megc(toy_index, source, config, str(tmp_path), model_config=small_backbone())
        # two live samples plus one synthetic moire sample; real replays never count
        assert all(r['n_m'] == 3 for r in result.history)

    def test_checkpoint_reload(self, toy_index, providers, tmp_path):
        result = _run(toy_index, providers, tmp_path, _config(max_steps=2))
        model, payload = load_megc_checkpoint(result.checkpoint_path)
        assert payload['extra']['step'] == 2
        assert model.enabled_cues == result.model.enabled_cues
        x = torch.rand(1, 6, 64, 64)
        with torch.no_grad():
            assert torch.allclose(model(x).logits, result.model(x).logits)

    def test_missing_provider_fails_before_training(self, toy_index, tmp_path):
        providers = {'depth': DomeDepthProvider(), 'reflection': ZeroMapProvider('reflection')}
        with pytest.raises(MissingProviderError):
            _run(toy_index, providers, tmp_path)
        assert not os.path.isfile(os.path.join(str(tmp_path), 'checkpoint.pt'))

    @pytest.mark.slow
    def test_overfits_small_corpus(self, toy_index, tmp_path):
        providers = {
            'depth': DomeDepthProvider(),
            'reflection': ZeroMapProvider('reflection'),
            'moire': ConstantMapProvider('moire', 0.25),
        }
        config = TrainConfig(max_steps=300, batch_size=8, lr=1e-3, desk_scale=True,
                             composite_fraction=0.0, weights=LossWeights())
        result = train_megc(toy_index, SupervisionSource(providers), config, str(tmp_path))
        first = result.history[0]['l_overall']
        curve = smoothed([r['l_overall'] for r in result.history], 10)
        assert curve[-1] <= 0.1 * first

        samples = [load_sample(r) for r in toy_index.samples]
        model = result.model.eval()
        with torch.no_grad():
            predicted = model(batch_inputs(samples, model.config.input_size)).logits.argmax(dim=1)
        assert torch.equal(predicted, labels_to_tensor([s.label for s in samples]))


def test_live_bundle_has_only_depth(toy_index, providers):
    sample = load_sample(toy_index.live[0])
    bundle = supervision_for_sample(sample, providers['depth'], providers['reflection'], providers['moire'])
    assert bundle.depth_gt.max() > 0
    assert bundle.moire_gt.max() == 0 and bundle.reflection_gt.max() == 0


class TestSampleCache:

    def test_evicts_least_recently_used(self, toy_index):
        calls = []

        def loader(record):
            calls.append(record.sample_id)
            return load_sample(record)

        records = toy_index.live[:3]
        one = load_sample(records[0]).image.nbytes
        cache = SampleCache(loader, max_bytes=2 * one)
        cache(records[0])
        cache(records[1])
        cache(records[0])
        cache(records[2])
        assert len(cache) == 2
        assert cache.used_bytes <= 2 * one
        cache(records[0])
        cache(records[1])
        assert calls == [r.sample_id for r in records] + [records[1].sample_id]

    def test_zero_budget_caches_nothing(self, toy_index):
        cache = SampleCache(max_bytes=0)
        cache(toy_index.live[0])
        assert len(cache) == 0
