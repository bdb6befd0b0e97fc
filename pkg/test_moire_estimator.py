#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Tests for the moire-map extraction network"""

import os

import numpy as np
import pytest
import torch

from corpus import FaceSample, stack_rgb_hsv
from cue_sources import MoireNetProvider, ResidualMoireProvider
from cue_synthesis import MoirePair, composite_moire, random_grating_pair, synthesize_moire_pattern
from moire_estimator import (
    DEMOIRE_BACKBONES, build_moire_net, extract_moire_map, extract_residual_map,
    load_moire_net, pretrain_backbone, save_moire_net, train_moire_net,
)
from trainer import smoothed
from utils.checkpoint import CheckpointMismatchError, save_checkpoint
from utils.run_config import MoireNetConfig, MoireTrainSettings


def _live(size, value=0.5, seed=0):
    rgb = np.full((size, size, 3), value, np.float32)
    return FaceSample(image=stack_rgb_hsv(rgb), label='live', spoof_type='none',
                      source_id=f"live_{seed}", face_box=(0, 0, size, size), crop_box=(0, 0, size, size))


def _pairs(n, size=64, seed=0, alpha=0.3):
    rng = np.random.default_rng(seed)
    pairs = []
    for i in range(n):
        a, b = random_grating_pair(rng)
        pairs.append(composite_moire(_live(size, seed=i), synthesize_moire_pattern(a, b, (size, size)), alpha))
    return pairs


@pytest.fixture(scope='module')
def trained_default():
    """Default estimator: backbone pre-trained then frozen, 200 steps on 64 pairs at 256 px"""
    pairs = _pairs(64, size=256, seed=1)
    settings = MoireTrainSettings(steps=200, pretrain_steps=200, batch_size=8)
    net = build_moire_net(MoireNetConfig())
    pretrain_backbone(net, pairs, settings, freeze=True)
    return train_moire_net(net, pairs, settings)


def _conv_params(c_in, c_out, k):
    return c_in * c_out * k * k + c_out


def _snapshot(module):
    return {k: v.detach().clone() for k, v in module.state_dict().items()}


class TestArchitecture:

    def test_two_adapt_and_two_refine_convs(self):
        net = build_moire_net(MoireNetConfig())
        for stage in (net.adapt, net.refine):
            convs = [m for m in stage if isinstance(m, torch.nn.Conv2d)]
            assert len(convs) == 2
            assert all(c.kernel_size == (3, 3) for c in convs)

    def test_parameter_count(self):
        cfg = MoireNetConfig()
        net = build_moire_net(cfg)
        w0, w1, w2 = cfg.backbone_widths
        backbone = (_conv_params(6, w0, 3) + _conv_params(w0, w1, 3) + _conv_params(w1, w2, 3)
                    + _conv_params(w2, w1, 4) + _conv_params(w1, w0, 4) + _conv_params(w0, 6, 4))
        a, r = cfg.adapt_width, cfg.refine_width
        head = _conv_params(6, a, 3) + _conv_params(a, a, 3) + _conv_params(a, r, 3) + _conv_params(r, 1, 3)
        assert sum(p.numel() for p in net.backbone.parameters()) == backbone
        assert sum(p.numel() for p in net.parameters()) == backbone + head

    def test_unknown_backbone(self):
        with pytest.raises(ValueError, match="unknown demoire backbone 'mrgan'"):
            build_moire_net(MoireNetConfig(demoire_backbone='mrgan'))
        assert {'encoder_decoder', 'identity'} <= set(DEMOIRE_BACKBONES)

    def test_identity_backbone_zero_residual(self):
        net = build_moire_net(MoireNetConfig(demoire_backbone='identity'))
        x = torch.rand(2, 6, 64, 64)
        assert torch.count_nonzero(net.forward_residual(x)) == 0

    def test_output_shape_and_range(self):
        net = build_moire_net(MoireNetConfig())
        out = net(torch.rand(3, 6, 256, 256))
        assert out.shape == (3, 32, 32)
        assert float(out.min()) >= 0.0 and float(out.max()) <= 1.0

    def test_refine_with_input(self):
        net = build_moire_net(MoireNetConfig(refine_with_input=True))
        assert net.refine[0].in_channels == net.config.adapt_width + 6
        assert net(torch.rand(1, 6, 64, 64)).shape == (1, 32, 32)

    def test_frozen_backbone_stays_in_eval(self):
        net = build_moire_net(MoireNetConfig())
        assert net.backbone_frozen
        net.train()
        assert net.training and not net.backbone.training


class TestTraining:

    def test_frozen_backbone_unchanged(self):
        net = build_moire_net(MoireNetConfig())
        before_backbone, before_adapt = _snapshot(net.backbone), _snapshot(net.adapt)
        net, history = train_moire_net(net, _pairs(6), MoireTrainSettings(steps=3, batch_size=2))
        assert len(history) == 3
        for key, value in _snapshot(net.backbone).items():
            assert torch.equal(value, before_backbone[key])
        assert any(not torch.equal(v, before_adapt[k]) for k, v in _snapshot(net.adapt).items())
        assert all(p.grad is None or float(p.grad.abs().sum()) == 0.0 for p in net.backbone.parameters())

    def test_unfrozen_backbone_trains(self):
        net = build_moire_net(MoireNetConfig(freeze_backbone=False))
        before = _snapshot(net.backbone)
        train_moire_net(net, _pairs(4), MoireTrainSettings(steps=2, batch_size=2))
        assert any(not torch.equal(v, before[k]) for k, v in _snapshot(net.backbone).items())

    def test_zero_targets_pull_predictions_down(self):
        pairs = [MoirePair(p.image, np.zeros_like(p.moire_gt), p.clean) for p in _pairs(4)]
        net = build_moire_net(MoireNetConfig(demoire_backbone='identity', refine_with_input=True))
        x = torch.from_numpy(np.stack([p.image for p in pairs])).permute(0, 3, 1, 2).contiguous()
        with torch.no_grad():
            before = float(net(x).abs().mean())
        net, history = train_moire_net(net, pairs, MoireTrainSettings(steps=40, batch_size=4, lr=1e-2))
        with torch.no_grad():
            after = float(net(x).abs().mean())
        assert after < before
        assert history[-1] < history[0]

    def test_empty_pairs(self):
        with pytest.raises(ValueError, match='empty moire pair stream'):
            train_moire_net(build_moire_net(MoireNetConfig()), [], MoireTrainSettings(steps=1))

    def test_pretrain_then_freeze(self):
        net = build_moire_net(MoireNetConfig())
        before = _snapshot(net.backbone)
        history = pretrain_backbone(net, _pairs(4), MoireTrainSettings(pretrain_steps=3, batch_size=2))
        assert len(history) == 3
        assert net.backbone_frozen
        assert any(not torch.equal(v, before[k]) for k, v in _snapshot(net.backbone).items())

    def test_pretrain_skipped_for_parameterless_backbone(self):
        net = build_moire_net(MoireNetConfig(demoire_backbone='identity'))
        assert pretrain_backbone(net, _pairs(2), MoireTrainSettings(pretrain_steps=5)) == []

    @pytest.mark.slow
    def test_smoke_run_reduces_loss(self, trained_default):
        _, history = trained_default
        curve = smoothed(history, 10)
        assert curve[-1] <= 0.25 * history[0]

    @pytest.mark.slow
    def test_held_out_maps_correlate(self, trained_default):
        net, _ = trained_default
        held_out = _pairs(16, size=256, seed=99)
        predicted = np.concatenate([extract_moire_map(net, p.image).ravel() for p in held_out])
        target = np.concatenate([p.moire_gt.ravel() for p in held_out])
        assert np.corrcoef(predicted, target)[0, 1] > 0.5

    @pytest.mark.slow
    def test_clean_images_score_lower(self, trained_default):
        net, _ = trained_default
        held_out = _pairs(16, size=256, seed=123)
        clean = np.mean([extract_moire_map(net, p.clean).mean() for p in held_out])
        moire = np.mean([extract_moire_map(net, p.image).mean() for p in held_out])
        assert clean < moire


class TestExtraction:

    def test_deterministic_map(self):
        net = build_moire_net(MoireNetConfig())
        image = _pairs(1, size=256)[0].image
        a = extract_moire_map(net, image)
        b = extract_moire_map(net, image)
        assert a.shape == (32, 32)
        np.testing.assert_array_equal(a, b)
        assert a.min() >= 0.0 and a.max() <= 1.0

    def test_wrong_size(self):
        net = build_moire_net(MoireNetConfig())
        with pytest.raises(ValueError, match='256x256x6'):
            extract_moire_map(net, np.zeros((64, 64, 6), np.float32))

    def test_residual_map_range(self):
        net = build_moire_net(MoireNetConfig())
        values = extract_residual_map(net, _pairs(1, size=256)[0].image)
        assert values.shape == (32, 32)
        assert values.min() >= 0.0 and values.max() <= 1.0

    def test_identity_residual_map_is_zero(self):
        net = build_moire_net(MoireNetConfig(demoire_backbone='identity'))
        assert np.all(extract_residual_map(net, _pairs(1, size=256)[0].image) == 0.0)


class TestCheckpoint:

    def test_save_and_load(self, tmp_path):
        net = build_moire_net(MoireNetConfig(adapt_width=8, refine_width=8))
        net, history = train_moire_net(net, _pairs(4), MoireTrainSettings(steps=2, batch_size=2))
        path = save_moire_net(str(tmp_path / 'moire.pt'), net, history)
        restored = load_moire_net(path)
        assert restored.config == net.config
        image = _pairs(1, size=256, seed=9)[0].image
        np.testing.assert_array_equal(extract_moire_map(net, image), extract_moire_map(restored, image))

    def test_wrong_kind(self, tmp_path):
        path = str(tmp_path / 'other.pt')
        save_checkpoint(path, 'megc', build_moire_net(MoireNetConfig()))
        with pytest.raises(CheckpointMismatchError, match="expected a 'moire' checkpoint"):
            load_moire_net(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_moire_net(os.path.join(str(tmp_path), 'absent.pt'))


class TestProviders:

    def _samples(self, n):
        return [FaceSample(image=p.image, label='spoof', spoof_type='replay', source_id=f"replay_{i}",
                           face_box=(0, 0, 256, 256)) for i, p in enumerate(_pairs(n, size=256, seed=5))]

    def test_map_cache_is_bounded(self):
        net = build_moire_net(MoireNetConfig())
        provider = MoireNetProvider(net, cache_bytes=2 * 32 * 32 * 4)
        samples = self._samples(5)
        for sample in samples:
            np.testing.assert_array_equal(provider.get_map(sample), extract_moire_map(net, sample.image))
        assert len(provider._cache) == 2
        assert provider.get_map(samples[-1]) is provider.get_map(samples[-1])

    def test_residual_provider(self):
        net = build_moire_net(MoireNetConfig())
        sample = self._samples(1)[0]
        np.testing.assert_array_equal(ResidualMoireProvider(net).get_map(sample),
                                      extract_residual_map(net, sample.image))
