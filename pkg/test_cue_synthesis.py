#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Tests for moire synthesis, boundary composites and supervision bundles"""

import os
import math

import numpy as np
import pytest

from config import MAP_SIZE
from corpus import FaceSample, load_sample, stack_rgb_hsv
from cue_sources import DomeDepthProvider, SyntheticMoireProvider, ZeroMapProvider
from cue_synthesis import (
    CueValidity, GratingSpec, MissingProviderError, PasteGeometry, SupervisionBundle,
    beat_frequency, build_moire_pairs, check_similar, composite_boundary, composite_moire,
    generate_grating, jitter_rect, mask_to_boundary_map, random_grating_pair,
    make_composites, supervision_for_sample, synthesize_moire_pattern, synthetic_moire_sample,
    validity_for, write_synthetic_cues,
)
from utils.image_io import read_cue_map, read_frame, write_float_frame, write_frame
from conftest import ConstantMapProvider

N = 256


def _sample(label='live', spoof_type='none', value=None, seed=0, source_spoof_type=None, boundary_gt=None):
    rng = np.random.default_rng(seed)
    rgb = np.full((N, N, 3), value, np.float32) if value is not None else rng.random((N, N, 3)).astype(np.float32)
    return FaceSample(
        image=stack_rgb_hsv(rgb), label=label, spoof_type=spoof_type,
        source_id=f"{spoof_type}_{seed}", face_box=(64, 64, 128, 128),
        source_spoof_type=source_spoof_type, boundary_gt=boundary_gt,
    )


def _dominant_frequency(values):
    """Radial frequency (cycles/px) of the strongest non-DC FFT bin"""
    spectrum = np.abs(np.fft.fft2(values - values.mean()))
    spectrum[0, 0] = 0.0
    ky, kx = np.unravel_index(np.argmax(spectrum), spectrum.shape)
    fy = np.fft.fftfreq(values.shape[0])[ky]
    fx = np.fft.fftfreq(values.shape[1])[kx]
    return math.hypot(fx, fy), fx, fy


def _majority_oracle(rect, size=N, stride=8):
    x0, y0, x1, y1 = rect
    out = np.zeros((size // stride, size // stride), np.float32)
    for cy in range(size // stride):
        for cx in range(size // stride):
            ox = max(0, min(x1, (cx + 1) * stride) - max(x0, cx * stride))
            oy = max(0, min(y1, (cy + 1) * stride) - max(y0, cy * stride))
            out[cy, cx] = 1.0 if ox * oy * 2 > stride * stride else 0.0
    return out


class TestGratings:

    def test_period_and_phase(self):
        g = generate_grating(GratingSpec(0.25), 8, 8)
        assert np.allclose(g, g[0:1, :])
        np.testing.assert_allclose(g[:, 0], 1.0)
        np.testing.assert_allclose(g[:, 4], 1.0)
        np.testing.assert_allclose(g[:, 2], 0.0, atol=1e-12)

    def test_amplitude_scales(self):
        g = generate_grating(GratingSpec(0.25, amplitude=0.5), 16, 16)
        assert g.max() == pytest.approx(0.5)
        assert g.min() >= 0.0

    def test_vertical_orientation_peak(self):
        g = generate_grating(GratingSpec(0.2, orientation=math.pi / 2), 100, 100)
        _, fx, fy = _dominant_frequency(g)
        assert fx == pytest.approx(0.0)
        assert abs(fy) == pytest.approx(0.2)

    def test_aliasing_rejected(self):
        with pytest.raises(ValueError, match='aliasing'):
            generate_grating(GratingSpec(0.5), 16, 16)

    def test_minimum_size(self):
        with pytest.raises(ValueError, match='at least 8x8'):
            generate_grating(GratingSpec(0.1), 4, 16)


class TestMoirePattern:

    def test_beat_of_close_frequencies(self):
        pattern = synthesize_moire_pattern(GratingSpec(0.20), GratingSpec(0.22), (N, N))
        assert pattern.min() == pytest.approx(0.0) and pattern.max() == pytest.approx(1.0)
        radial, _, _ = _dominant_frequency(pattern)
        assert abs(radial - 0.02) <= 1.0 / N

    def test_identical_gratings_give_constant(self):
        pattern = synthesize_moire_pattern(GratingSpec(0.25), GratingSpec(0.25), (N, N))
        assert np.all(pattern == 0.0)

    def test_rotation_beat_spacing(self):
        f, dtheta = 0.2, 0.1
        a, b = GratingSpec(f, 0.3), GratingSpec(f, 0.3 + dtheta)
        spacing = 1.0 / (2.0 * f * math.sin(dtheta / 2.0))
        assert 1.0 / beat_frequency(a, b) == pytest.approx(spacing)
        radial, _, _ = _dominant_frequency(synthesize_moire_pattern(a, b, (N, N)))
        assert abs(radial - 1.0 / spacing) <= 1.0 / N

    def test_random_pairs_follow_beat(self):
        rng = np.random.default_rng(2024)
        for _ in range(20):
            a, b = random_grating_pair(rng)
            _, fx, fy = _dominant_frequency(synthesize_moire_pattern(a, b, (N, N)))
            diff, total = a.frequency_vector - b.frequency_vector, a.frequency_vector + b.frequency_vector
            beat = diff if np.linalg.norm(diff) <= np.linalg.norm(total) else total
            assert np.linalg.norm(beat) == pytest.approx(beat_frequency(a, b))
            # either sign of the beat vector, one bin per axis
            bins = min(max(abs(fx - s * beat[0]), abs(fy - s * beat[1])) for s in (1.0, -1.0)) * N
            assert bins <= 1.0

    def test_dissimilar_rejected(self):
        with pytest.raises(ValueError, match='fringes not similar'):
            synthesize_moire_pattern(GratingSpec(0.1), GratingSpec(0.3), (N, N))
        with pytest.raises(ValueError, match='fringes not similar'):
            check_similar(GratingSpec(0.2, 0.0), GratingSpec(0.2, 0.5))

    def test_orientation_measured_modulo_pi(self):
        check_similar(GratingSpec(0.2, 0.05), GratingSpec(0.2, math.pi - 0.05))


class TestCompositeMoire:

    def test_constant_map_leaves_image_unchanged(self):
        live = _sample(seed=1)
        pair = composite_moire(live, np.full((N, N), 0.7), alpha=0.3)
        np.testing.assert_array_equal(pair.image, live.image)
        assert pair.moire_gt.shape == (MAP_SIZE, MAP_SIZE)

    def test_residual_carries_pattern(self):
        live = _sample(value=0.5)
        pattern = synthesize_moire_pattern(GratingSpec(0.20), GratingSpec(0.22), (N, N))
        pair = composite_moire(live, pattern, alpha=0.3)
        residual = pair.image[..., 0].astype(np.float64) - live.image[..., 0]
        assert _dominant_frequency(residual)[0] == pytest.approx(_dominant_frequency(pattern)[0])
        assert pair.moire_gt.min() >= 0.0 and pair.moire_gt.max() <= 1.0
        assert pair.clean is live.image

    def test_small_alpha_approaches_input(self):
        live = _sample(value=0.5)
        pattern = synthesize_moire_pattern(GratingSpec(0.20), GratingSpec(0.22), (N, N))
        pair = composite_moire(live, pattern, alpha=1e-6)
        assert np.abs(pair.image[..., :3] - live.image[..., :3]).max() < 1e-5

    def test_rejects_spoof_and_bad_alpha(self):
        with pytest.raises(ValueError, match='live sample'):
            composite_moire(_sample('spoof', 'replay'), np.zeros((N, N)))
        with pytest.raises(ValueError, match='alpha'):
            composite_moire(_sample(), np.zeros((N, N)), alpha=0.0)

    def test_pairs_only_from_live(self):
        samples = [_sample(seed=1), _sample('spoof', 'replay', seed=2), _sample(seed=3)]
        pairs = build_moire_pairs(samples, pairs_per_sample=2, alpha=0.3, seed=0)
        assert len(pairs) == 4
        again = build_moire_pairs(samples, pairs_per_sample=2, alpha=0.3, seed=0)
        assert all(np.array_equal(p.moire_gt, q.moire_gt) for p, q in zip(pairs, again))


class TestBoundaryComposite:

    def test_centered_paste_cells(self):
        live, spoof = _sample(seed=1), _sample('spoof', 'replay', seed=2)
        comp = composite_boundary(live, spoof, PasteGeometry((64, 64, 192, 192)))
        expected = np.zeros((MAP_SIZE, MAP_SIZE), np.float32)
        expected[8:24, 8:24] = 1.0
        np.testing.assert_array_equal(comp.boundary_gt, expected)
        assert comp.rect == (64, 64, 192, 192)
        assert comp.sample.spoof_type == 'composite'
        assert comp.sample.label == 'spoof'
        assert comp.sample.source_spoof_type == 'replay'
        np.testing.assert_array_equal(comp.sample.image[:64, :, :3], live.image[:64, :, :3])

    def test_random_geometries_match_majority_vote(self):
        rng = np.random.default_rng(7)
        live, spoof = _sample(seed=1), _sample('spoof', 'print', seed=2)
        for _ in range(50):
            x0, y0 = rng.uniform(0, 180, size=2)
            w, h = rng.uniform(20, 120, size=2)
            geometry = PasteGeometry((x0, y0, x0 + w, y0 + h), seed=int(rng.integers(1 << 30)))
            comp = composite_boundary(live, spoof, geometry)
            assert set(np.unique(comp.boundary_gt)) <= {0.0, 1.0}
            np.testing.assert_array_equal(comp.boundary_gt, _majority_oracle(comp.rect))
            rx0, ry0, rx1, ry1 = comp.rect
            assert 0 <= rx0 < rx1 <= N and 0 <= ry0 < ry1 <= N

    def test_jitter_ranges(self):
        rect = (100.0, 100.0, 150.0, 150.0)
        for seed in range(30):
            x0, y0, x1, y1 = jitter_rect(PasteGeometry(rect, seed))
            assert 0.9 * 50 - 1 <= x1 - x0 <= 1.1 * 50 + 1
            assert abs((x0 + x1) / 2.0 - 125.0) <= 8 + 1

    def test_seed_reproducible(self):
        live, spoof = _sample(seed=1), _sample('spoof', 'replay', seed=2)
        a = composite_boundary(live, spoof, PasteGeometry((64, 64, 192, 192), seed=42))
        b = composite_boundary(live, spoof, PasteGeometry((64, 64, 192, 192), seed=42))
        np.testing.assert_array_equal(a.sample.image, b.sample.image)
        np.testing.assert_array_equal(a.boundary_gt, b.boundary_gt)
        assert a.sample.source_id == b.sample.source_id

    def test_out_of_bounds_is_clipped(self):
        live, spoof = _sample(seed=1), _sample('spoof', 'replay', seed=2)
        comp = composite_boundary(live, spoof, PasteGeometry((200, 200, 300, 300)))
        assert comp.rect == (200, 200, 256, 256)

    def test_degenerate_region(self):
        live, spoof = _sample(seed=1), _sample('spoof', 'replay', seed=2)
        with pytest.raises(ValueError, match='degenerate'):
            composite_boundary(live, spoof, PasteGeometry((10, 10, 10, 50)))

    def test_mask_majority_is_strict(self):
        mask = np.zeros((16, 16), np.uint8)
        mask[:, :4] = 1
        assert mask_to_boundary_map(mask, 8).sum() == 0
        mask[0, 4] = 1
        assert mask_to_boundary_map(mask, 8)[0, 0] == 1.0


class TestSupervision:

    def test_validity_table(self):
        assert validity_for('live', 'none') == CueValidity(True, True, True, True)
        assert validity_for('spoof', 'print') == CueValidity(True, True, False, False)
        assert validity_for('spoof', 'replay') == CueValidity(True, True, True, False)
        assert validity_for('spoof', 'composite', 'print') == CueValidity(True, True, False, True)
        assert validity_for('spoof', 'composite', 'replay') == CueValidity(True, True, True, True)
        with pytest.raises(ValueError):
            validity_for('spoof', 'mask')

    def test_validity_without_real_moire(self):
        assert validity_for('spoof', 'replay', real_moire=False) == CueValidity(True, True, False, False)
        assert validity_for('spoof', 'composite', 'replay', real_moire=False).moire is False
        assert validity_for('spoof', 'synthetic_moire', real_moire=False) == CueValidity(True, True, True, False)
        assert validity_for('live', 'none', real_moire=False).moire is True

    def test_synthetic_moire_sample(self):
        live = _sample(value=0.5, seed=2)
        sample = synthetic_moire_sample(live, seed=11)
        assert (sample.label, sample.spoof_type) == ('spoof', 'synthetic_moire')
        assert sample.source_id != live.source_id
        assert sample.moire_gt.shape == (MAP_SIZE, MAP_SIZE)
        assert sample.moire_gt.min() == pytest.approx(0.0) and sample.moire_gt.max() == pytest.approx(1.0)
        assert not np.array_equal(sample.image, live.image)
        again = synthetic_moire_sample(live, seed=11)
        np.testing.assert_array_equal(again.image, sample.image)

        bundle = supervision_for_sample(sample, None, ZeroMapProvider('reflection'), SyntheticMoireProvider(),
                                        real_moire=False)
        assert bundle.validity.moire
        np.testing.assert_array_equal(bundle.moire_gt, np.clip(sample.moire_gt, 0.0, 1.0))

    def test_synthetic_provider_rejects_real_replay(self):
        with pytest.raises(ValueError, match='no synthetic moire map'):
            SyntheticMoireProvider().get_map(_sample('spoof', 'replay'))

    def test_live_zero_rule(self):
        bundle = supervision_for_sample(_sample(seed=1), DomeDepthProvider(), None, None)
        assert bundle.validity == CueValidity(True, True, True, True)
        assert bundle.depth_gt.max() == pytest.approx(1.0)
        assert bundle.moire_gt.max() == bundle.boundary_gt.max() == bundle.reflection_gt.max() == 0.0

    def test_print_spoof(self):
        bundle = supervision_for_sample(_sample('spoof', 'print'), DomeDepthProvider(),
                                        ZeroMapProvider('reflection'), None)
        assert bundle.validity.moire is False and bundle.validity.boundary is False
        assert bundle.depth_gt.max() == 0.0

    def test_replay_uses_moire_provider(self):
        bundle = supervision_for_sample(_sample('spoof', 'replay'), DomeDepthProvider(),
                                        ZeroMapProvider('reflection'), ConstantMapProvider('moire', 0.25))
        assert bundle.validity.moire is True and bundle.validity.boundary is False
        np.testing.assert_allclose(bundle.moire_gt, 0.25)

    def test_missing_moire_provider(self):
        with pytest.raises(MissingProviderError, match="'moire'") as info:
            supervision_for_sample(_sample('spoof', 'replay'), DomeDepthProvider(), ZeroMapProvider('reflection'), None)
        assert info.value.cue == 'moire'

    def test_disabled_cue_needs_no_provider(self):
        bundle = supervision_for_sample(_sample('spoof', 'replay'), DomeDepthProvider(), ZeroMapProvider('reflection'),
                                        None, enabled_cues=['depth', 'reflection', 'boundary'])
        assert bundle.moire_gt.max() == 0.0

    def test_composite_boundary_from_construction(self):
        live, spoof = _sample(seed=1), _sample('spoof', 'print', seed=2)
        comp = composite_boundary(live, spoof, PasteGeometry((64, 64, 192, 192)))
        bundle = supervision_for_sample(comp.sample, DomeDepthProvider(), ZeroMapProvider('reflection'), None)
        assert bundle.validity == CueValidity(True, True, False, True)
        np.testing.assert_array_equal(bundle.boundary_gt, comp.boundary_gt)

    def test_composite_without_map(self):
        sample = _sample('spoof', 'composite', source_spoof_type='print')
        with pytest.raises(MissingProviderError, match='boundary'):
            supervision_for_sample(sample, DomeDepthProvider(), ZeroMapProvider('reflection'), None)

    def test_bundle_rejects_non_binary_boundary(self):
        maps = {f"{c}_gt": np.zeros((MAP_SIZE, MAP_SIZE), np.float32) for c in ('depth', 'reflection', 'moire')}
        with pytest.raises(ValueError, match='binary'):
            SupervisionBundle(boundary_gt=np.full((MAP_SIZE, MAP_SIZE), 0.5, np.float32),
                              validity=CueValidity(True, True, True, True), **maps)


class TestSyntheticCueFiles:

    def test_write_synthetic_cues(self, toy_index, tmp_path):
        records = list(toy_index.samples)
        samples = [load_sample(r) for r in records]
        out_dir = str(tmp_path / 'synth')
        updated = write_synthetic_cues(records, samples, out_dir, DomeDepthProvider(), composites_per_spoof=1, seed=3)

        assert len(updated) == len(records) + 8
        for record in updated[:len(records)]:
            if record.label == 'live':
                assert os.path.isfile(record.cue_paths['depth'])
            else:
                assert 'depth' not in record.cue_paths
        composites = updated[len(records):]
        assert all(r.spoof_type == 'composite' and r.prepared for r in composites)
        assert {r.source_spoof_type for r in composites} <= {'print', 'replay'}

        sample = load_sample(composites[0])
        assert sample.boundary_gt is not None
        assert set(np.unique(sample.boundary_gt)) <= {0.0, 1.0}
        assert sample.boundary_gt.sum() > 0
        depth = read_cue_map(updated[0].cue_paths['depth'], 'depth')
        np.testing.assert_allclose(depth, DomeDepthProvider().get_map(samples[0]), atol=1.0 / 65535)

    def test_composites_keep_full_precision(self, toy_index, tmp_path):
        records = list(toy_index.samples)
        samples = [load_sample(r) for r in records]
        updated = write_synthetic_cues(records, samples, str(tmp_path / 'synth'), DomeDepthProvider(),
                                       composites_per_spoof=1, seed=3)
        composites = updated[len(records):]
        assert all(r.path.endswith('.npy') for r in composites)
        assert all(os.path.isfile(r.path[:-len('.npy')] + '.png') for r in composites)

        live = [s for s in samples if s.label == 'live']
        spoof = [s for s in samples if s.label != 'live']
        expected = make_composites(live, spoof, len(spoof), 3)[0].sample.image[..., :3]
        np.testing.assert_allclose(load_sample(composites[0]).image[..., :3], expected, atol=1e-6)

    def test_float_frames_keep_small_residuals(self, tmp_path):
        rgb = np.full((16, 16, 3), 0.5, np.float32)
        rgb[::2] += 1e-3
        write_float_frame(str(tmp_path / 'f.npy'), rgb)
        write_frame(str(tmp_path / 'f.png'), rgb)
        np.testing.assert_array_equal(read_frame(str(tmp_path / 'f.npy')), rgb)
        assert np.ptp(read_frame(str(tmp_path / 'f.png'))) == 0.0
        with pytest.raises(ValueError, match='suffix'):
            write_float_frame(str(tmp_path / 'f.png'), rgb)
