#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Shared test fixtures

Builds a small synthetic corpus of PNG frames with a JSON-lines manifest
in a temporary directory, plus stub cue providers and a small network
configuration that keeps CPU training fast.
"""

import os
import sys
import json

import cv2
import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from base import CueProvider
from config import MAP_SIZE
from corpus import load_manifest
from cue_sources import DomeDepthProvider, ZeroMapProvider
from megc_net import BackboneConfig

FRAME_SIZE = 64
FACE_BOX = [16, 16, 32, 32]


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long end-to-end training runs')


def make_frame(rng: np.random.Generator, kind: str, size: int = FRAME_SIZE) -> np.ndarray:
    """RGB uint8 frame whose look depends on the sample category"""
    y, x = np.mgrid[0:size, 0:size].astype(np.float64)
    r = np.sqrt((x - size / 2.0) ** 2 + (y - size / 2.0) ** 2) / (size / 2.0)
    if kind == 'live':
        face = np.clip(1.0 - r, 0.0, 1.0)
        rgb = np.stack([0.55 + 0.4 * face, 0.35 + 0.3 * face, 0.25 + 0.2 * face], axis=2)
        rgb += rng.normal(0.0, 0.02, rgb.shape)
    elif kind == 'print':
        gray = 0.5 + rng.normal(0.0, 0.15, (size, size))
        rgb = np.repeat(gray[..., None], 3, axis=2)
    else:
        stripes = 0.5 + 0.4 * np.cos(2.0 * np.pi * 0.3 * x + rng.uniform(0, 2 * np.pi))
        rgb = np.stack([0.2 * stripes, 0.4 * stripes, stripes], axis=2)
    return np.clip(np.rint(rgb * 255.0), 0, 255).astype(np.uint8)


def write_toy_corpus(
    root: str,
    name: str = 'train',
    n_live: int = 8,
    n_print: int = 4,
    n_replay: int = 4,
    seed: int = 0,
    with_dev: bool = False,
    frames_per_video: int = 1,
) -> str:
    """
    Write frames and a manifest under root

    Args:
        root: Output directory
        name: Corpus name (manifest <name>.jsonl, frames under <name>/)
        n_live: Live frames
        n_print: Print spoof frames
        n_replay: Replay spoof frames
        seed: Frame noise seed
        with_dev: Mark every 4th record of each category as split 'dev'
        frames_per_video: Consecutive frames sharing one video_id

    Returns:
        Manifest path
    """
    rng = np.random.default_rng(seed)
    frame_dir = os.path.join(root, name)
    os.makedirs(frame_dir, exist_ok=True)
    lines = []
    for kind, count in (('live', n_live), ('print', n_print), ('replay', n_replay)):
        for i in range(count):
            rel = f"{name}/{kind}_{i:03d}.png"
            rgb = make_frame(rng, kind)
            cv2.imwrite(os.path.join(root, rel), cv2.cvtColor(rgb, cv2.COLOR_RGB2BGR))
            record = {
                'path': rel,
                'label': 'live' if kind == 'live' else 'spoof',
                'spoof_type': 'none' if kind == 'live' else kind,
                'face_box': list(FACE_BOX),
                'video_id': f"{name}_{kind}_v{i // frames_per_video}",
            }
            if with_dev:
                record['split'] = 'dev' if i % 4 == 3 else 'train'
            lines.append(json.dumps(record))
    path = os.path.join(root, f"{name}.jsonl")
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write('\n'.join(lines) + '\n')
    return path


class ConstantMapProvider(CueProvider):
    """Returns the same map for every sample"""

    def __init__(self, cue: str, value: float = 0.5):
        super().__init__(name='constant', cue=cue)
        self.value = value

    def get_map(self, sample):
        return np.full((MAP_SIZE, MAP_SIZE), self.value, dtype=np.float32)


def small_backbone() -> BackboneConfig:
    """64x64 inputs, 4-channel stages, 32x32 maps"""
    return BackboneConfig(stage_widths=[4] * 6, head_width=4, input_size=64, mafe_size=64, mfe_size=16)


@pytest.fixture
def toy_manifest(tmp_path):
    return write_toy_corpus(str(tmp_path))


@pytest.fixture
def toy_index(toy_manifest):
    return load_manifest(toy_manifest)


@pytest.fixture
def test_manifest(tmp_path):
    return write_toy_corpus(str(tmp_path), name='target', n_live=4, n_print=2, n_replay=2, seed=7)


@pytest.fixture
def providers():
    return {
        'depth': DomeDepthProvider(),
        'reflection': ZeroMapProvider('reflection'),
        'moire': ConstantMapProvider('moire'),
    }


@pytest.fixture
def run_root(tmp_path, monkeypatch):
    root = str(tmp_path / 'runs')
    monkeypatch.setenv('MEGC_RUN_DIR', root)
    return root
