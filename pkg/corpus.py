#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Dataset manifests, face-crop preparation and class-balanced batch streaming"""

import os
import json
import math
import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple

import cv2
import numpy as np
import pandas as pd

from config import (
    IMAGE_SIZE, IMAGE_CHANNELS, BOX_EXPANSION, LIVE, SPOOF, LABELS, SPOOF_TYPES
)
from utils.image_io import read_frame, read_cue_map

logger = logging.getLogger(__name__)

SPLITS = ['train', 'dev', 'test']

Box = Tuple[int, int, int, int]


class ManifestError(ValueError):
    """Raised for unreadable or inconsistent manifest content"""


@dataclass(frozen=True)
class ManifestRecord:
    """One manifest line"""
    path: str
    label: str
    spoof_type: str
    face_box: Box
    sample_id: str
    split: Optional[str] = None
    video_id: Optional[str] = None
    prepared: bool = False
    source_spoof_type: Optional[str] = None
    cues: Tuple[Tuple[str, str], ...] = ()

    @property
    def cue_paths(self) -> Dict[str, str]:
        return dict(self.cues)

    def to_json(self, relative_to: Optional[str] = None) -> Dict:
        """Serialize back to a manifest line dictionary"""
        def rel(p):
            return os.path.relpath(p, relative_to) if relative_to else p

        data = {
            'path': rel(self.path),
            'label': self.label,
            'spoof_type': self.spoof_type,
            'face_box': list(self.face_box),
            'sample_id': self.sample_id,
        }
        if self.split:
            data['split'] = self.split
        if self.video_id:
            data['video_id'] = self.video_id
        if self.prepared:
            data['prepared'] = True
        if self.source_spoof_type:
            data['source_spoof_type'] = self.source_spoof_type
        if self.cues:
            data['cues'] = {cue: rel(p) for cue, p in self.cues}
        return data


@dataclass(frozen=True)
class CorpusIndex:
    """Immutable set of manifest records for one split"""
    samples: Tuple[ManifestRecord, ...]
    split: str = 'train'
    root: str = '.'

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def live(self) -> List[ManifestRecord]:
        return [r for r in self.samples if r.label == LIVE]

    @property
    def spoof(self) -> List[ManifestRecord]:
        return [r for r in self.samples if r.label == SPOOF]

    def filter(self, predicate: Callable[[ManifestRecord], bool], split: Optional[str] = None) -> 'CorpusIndex':
        return CorpusIndex(
            samples=tuple(r for r in self.samples if predicate(r)),
            split=split or self.split,
            root=self.root,
        )

    def class_counts(self) -> pd.DataFrame:
        """Per (label, spoof_type) record counts"""
        df = pd.DataFrame(
            [(r.label, r.spoof_type) for r in self.samples],
            columns=['label', 'spoof_type'],
        )
        return df.value_counts().rename('count').reset_index()


@dataclass
class FaceSample:
    """One preprocessed face crop with provenance"""
    image: np.ndarray           # 256 x 256 x 6, float32 in [0, 1]
    label: str
    spoof_type: str
    source_id: str
    face_box: Box               # original-frame pixel coordinates
    crop_box: Box = (0, 0, IMAGE_SIZE, IMAGE_SIZE)   # expanded, clipped box (x0, y0, x1, y1)
    source_spoof_type: Optional[str] = None
    video_id: Optional[str] = None
    cue_paths: Dict[str, str] = field(default_factory=dict)
    boundary_gt: Optional[np.ndarray] = None
    moire_gt: Optional[np.ndarray] = None

    def __post_init__(self):
        if (self.label == LIVE) != (self.spoof_type == 'none'):
            raise ValueError(
                f"Inconsistent label/spoof_type for {self.source_id}: {self.label}/{self.spoof_type}"
            )

    @property
    def is_live(self) -> bool:
        return self.label == LIVE

    @property
    def face_box_in_crop(self) -> Tuple[float, float, float, float]:
        """Face box mapped into 256x256 crop coordinates as (x0, y0, x1, y1)"""
        return box_in_crop(self.face_box, self.crop_box, self.image.shape[1], self.image.shape[0])

    def with_image(self, image: np.ndarray, **changes) -> 'FaceSample':
        return replace(self, image=image, **changes)


def box_in_crop(face_box: Box, crop_box: Box, width: int = IMAGE_SIZE, height: int = IMAGE_SIZE) -> Tuple[float, float, float, float]:
    """Map an (x, y, w, h) frame box into the coordinates of a resized crop"""
    x, y, w, h = face_box
    cx0, cy0, cx1, cy1 = crop_box
    sx = width / float(cx1 - cx0)
    sy = height / float(cy1 - cy0)
    x0 = min(max((x - cx0) * sx, 0.0), float(width))
    y0 = min(max((y - cy0) * sy, 0.0), float(height))
    x1 = min(max((x + w - cx0) * sx, 0.0), float(width))
    y1 = min(max((y + h - cy0) * sy, 0.0), float(height))
    return x0, y0, x1, y1


def _default_sample_id(rel_path: str) -> str:
    stem = os.path.splitext(rel_path)[0]
    return stem.replace('\\', '_').replace('/', '_')


def _parse_record(raw: Dict, line_no: int, root: str) -> ManifestRecord:
    for key in ('path', 'label', 'spoof_type', 'face_box'):
        if key not in raw:
            raise ManifestError(f"line {line_no}: missing field '{key}'")

    label = raw['label']
    if label not in LABELS:
        raise ManifestError(f"line {line_no}: unknown label '{label}' (expected one of {', '.join(LABELS)})")
    spoof_type = raw['spoof_type']
    if spoof_type not in SPOOF_TYPES:
        raise ManifestError(
            f"line {line_no}: unknown spoof_type '{spoof_type}' (expected one of {', '.join(SPOOF_TYPES)})"
        )
    if (label == LIVE) != (spoof_type == 'none'):
        raise ManifestError(f"line {line_no}: label '{label}' inconsistent with spoof_type '{spoof_type}'")

    box = raw['face_box']
    if not isinstance(box, (list, tuple)) or len(box) != 4 or not all(isinstance(v, int) and not isinstance(v, bool) for v in box):
        raise ManifestError(f"line {line_no}: face_box must be four integers x,y,w,h, got {box!r}")

    rel_path = str(raw['path'])
    path = rel_path if os.path.isabs(rel_path) else os.path.join(root, rel_path)
    if not os.path.isfile(path):
        raise ManifestError(f"line {line_no}: image not found: {rel_path}")

    split = raw.get('split')
    if split is not None and split not in SPLITS:
        raise ManifestError(f"line {line_no}: unknown split '{split}'")

    source_spoof_type = raw.get('source_spoof_type')
    if source_spoof_type is not None and source_spoof_type not in ('print', 'replay'):
        raise ManifestError(f"line {line_no}: unknown source_spoof_type '{source_spoof_type}'")

    cues = raw.get('cues') or {}
    if not isinstance(cues, dict):
        raise ManifestError(f"line {line_no}: cues must be an object")
    cue_items = tuple(sorted(
        (str(cue), p if os.path.isabs(p) else os.path.join(root, p)) for cue, p in cues.items()
    ))

    return ManifestRecord(
        path=path,
        label=label,
        spoof_type=spoof_type,
        face_box=tuple(box),
        sample_id=str(raw.get('sample_id') or _default_sample_id(rel_path)),
        split=split,
        video_id=raw.get('video_id'),
        prepared=bool(raw.get('prepared', False)),
        source_spoof_type=source_spoof_type,
        cues=cue_items,
    )


def load_manifest(path: str, split: str = 'train') -> CorpusIndex:
    """
    Parse a JSON-lines manifest into a CorpusIndex

    Args:
        path: Manifest file path; record paths are relative to its directory
        split: Split the index represents ('train', 'dev' or 'test')

    Returns:
        CorpusIndex with every record parsed
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Manifest not found: {path}")
    if split not in SPLITS:
        raise ManifestError(f"unknown split '{split}'")

    root = os.path.dirname(os.path.abspath(path))
    records = []
    seen = set()
    with open(path, 'r', encoding='utf-8') as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as e:
                raise ManifestError(f"line {line_no}: malformed record ({e.msg})") from e
            if not isinstance(raw, dict):
                raise ManifestError(f"line {line_no}: record must be an object")
            record = _parse_record(raw, line_no, root)
            if record.sample_id in seen:
                raise ManifestError(f"line {line_no}: duplicate sample_id '{record.sample_id}'")
            seen.add(record.sample_id)
            records.append(record)

    if not records:
        raise ManifestError("empty manifest")

    index = CorpusIndex(samples=tuple(records), split=split, root=root)
    if split == 'train' and (not index.live or not index.spoof):
        raise ManifestError("train split needs at least one live and one spoof record")

    counts = index.class_counts()
    logger.info(
        "Loaded %d records from %s: %s", len(index), path,
        ', '.join(f"{r['label']}/{r['spoof_type']}={r['count']}" for r in counts.to_dict('records'))
    )
    return index


def write_manifest(path: str, records: Sequence[ManifestRecord]) -> None:
    """Write records as a JSON-lines manifest with paths relative to its directory"""
    root = os.path.dirname(os.path.abspath(path))
    os.makedirs(root, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        for record in records:
            fh.write(json.dumps(record.to_json(relative_to=root), sort_keys=True) + '\n')


def expand_face_box(face_box: Box, frame_width: int, frame_height: int) -> Box:
    """
    Double the face box about its center and clip it to the frame

    Args:
        face_box: (x, y, w, h) in frame pixels
        frame_width: Frame width
        frame_height: Frame height

    Returns:
        Clipped expanded box as (x0, y0, x1, y1)
    """
    x, y, w, h = face_box
    if w <= 0 or h <= 0:
        raise ValueError(f"Zero-area face box: {face_box}")
    if x >= frame_width or y >= frame_height or x + w <= 0 or y + h <= 0:
        raise ValueError(f"Face box {face_box} lies outside the {frame_width}x{frame_height} frame")

    cx = x + w / 2.0
    cy = y + h / 2.0
    half_w = w * BOX_EXPANSION / 2.0
    half_h = h * BOX_EXPANSION / 2.0
    x0 = max(0, int(math.floor(cx - half_w)))
    y0 = max(0, int(math.floor(cy - half_h)))
    x1 = min(frame_width, int(math.ceil(cx + half_w)))
    y1 = min(frame_height, int(math.ceil(cy + half_h)))
    return x0, y0, x1, y1


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Hexcone HSV of an RGB float image, every channel scaled to [0, 1]"""
    hsv = cv2.cvtColor(np.ascontiguousarray(rgb, dtype=np.float32), cv2.COLOR_RGB2HSV)
    hsv[..., 0] /= 360.0
    return np.clip(hsv, 0.0, 1.0)


def stack_rgb_hsv(rgb: np.ndarray) -> np.ndarray:
    """Stack RGB with its HSV conversion into an H x W x 6 image"""
    rgb = np.clip(np.asarray(rgb, dtype=np.float32), 0.0, 1.0)
    return np.concatenate([rgb, rgb_to_hsv(rgb)], axis=2)


def prepare_face_crop(frame: np.ndarray, face_box: Box, size: int = IMAGE_SIZE) -> np.ndarray:
    """
    Crop the expanded face box and build the 6-channel network input

    Args:
        frame: H x W x 3 RGB frame, float in [0, 1] or uint8
        face_box: (x, y, w, h) face box in frame pixels
        size: Output side length

    Returns:
        size x size x 6 float32 image (RGB then HSV)
    """
    frame = np.asarray(frame)
    if frame.dtype == np.uint8:
        frame = frame.astype(np.float32) / 255.0
    if frame.ndim != 3 or frame.shape[2] != 3:
        raise ValueError(f"Frame must be H x W x 3 RGB, got shape {frame.shape}")

    x0, y0, x1, y1 = expand_face_box(face_box, frame.shape[1], frame.shape[0])
    crop = np.ascontiguousarray(frame[y0:y1, x0:x1], dtype=np.float32)
    resized = cv2.resize(crop, (size, size), interpolation=cv2.INTER_LINEAR)
    image = stack_rgb_hsv(resized)
    assert image.shape == (size, size, IMAGE_CHANNELS)
    return image


def load_sample(record: ManifestRecord) -> FaceSample:
    """Read a record's image and turn it into a FaceSample"""
    frame = read_frame(record.path)
    if record.prepared:
        if frame.shape[:2] != (IMAGE_SIZE, IMAGE_SIZE):
            frame = cv2.resize(frame, (IMAGE_SIZE, IMAGE_SIZE), interpolation=cv2.INTER_LINEAR)
        image = stack_rgb_hsv(frame)
        crop_box = (0, 0, IMAGE_SIZE, IMAGE_SIZE)
    else:
        image = prepare_face_crop(frame, record.face_box)
        crop_box = expand_face_box(record.face_box, frame.shape[1], frame.shape[0])

    cue_paths = record.cue_paths
    boundary_gt = None
    if record.spoof_type == 'composite' and 'boundary' in cue_paths:
        boundary_gt = read_cue_map(cue_paths['boundary'], 'boundary')

    return FaceSample(
        image=image,
        label=record.label,
        spoof_type=record.spoof_type,
        source_id=record.sample_id,
        face_box=record.face_box,
        crop_box=crop_box,
        source_spoof_type=record.source_spoof_type,
        video_id=record.video_id,
        cue_paths=cue_paths,
        boundary_gt=boundary_gt,
    )


def _tile_permutations(rng: np.random.Generator, n: int, count: int) -> np.ndarray:
    """Concatenate shuffled permutations of range(n) until count indices are drawn"""
    reps = int(math.ceil(count / float(n)))
    return np.concatenate([rng.permutation(n) for _ in range(reps)])[:count]


def balanced_record_batches(
    index: CorpusIndex,
    batch_size: int,
    seed: int,
    epoch: int = 0,
) -> List[List[ManifestRecord]]:
    """
    One epoch of 1:1 live/spoof record batches

    The epoch length is set by the majority class; the minority class is
    resampled (shuffled permutations repeated) to fill its half of every batch.

    Args:
        index: Corpus index with both classes
        batch_size: Positive even batch size
        seed: Stream seed
        epoch: Epoch number, mixed into the seed

    Returns:
        List of batches, each live half followed by spoof half
    """
    if batch_size <= 0 or batch_size % 2 != 0:
        raise ValueError(f"batch_size must be a positive even integer, got {batch_size}")
    live, spoof = index.live, index.spoof
    if not live or not spoof:
        raise ValueError("balanced batches need both live and spoof records")

    half = batch_size // 2
    n_batches = int(math.ceil(max(len(live), len(spoof)) / float(half)))
    rng = np.random.default_rng([seed, epoch])
    live_idx = _tile_permutations(rng, len(live), n_batches * half)
    spoof_idx = _tile_permutations(rng, len(spoof), n_batches * half)

    batches = []
    for b in range(n_batches):
        sl = slice(b * half, (b + 1) * half)
        batch = [live[i] for i in live_idx[sl]] + [spoof[i] for i in spoof_idx[sl]]
        batches.append(batch)
    return batches


def balanced_batches(
    index: CorpusIndex,
    batch_size: int,
    seed: int,
    epoch: int = 0,
    loader: Callable[[ManifestRecord], FaceSample] = load_sample,
    workers: int = 0,
) -> Iterator[List[FaceSample]]:
    """
    Stream class-balanced FaceSample batches for one epoch

    Images of the next batch are decoded on a thread pool while the current
    batch is consumed; the emitted order is the single-threaded order.

    Args:
        index: Corpus index with both classes
        batch_size: Positive even batch size
        seed: Stream seed
        epoch: Epoch number
        loader: Record -> FaceSample function
        workers: Decoding threads (0 = decode inline)

    Yields:
        Lists of batch_size FaceSamples, live half first
    """
    record_batches = balanced_record_batches(index, batch_size, seed, epoch)
    if workers <= 0:
        for batch in record_batches:
            yield [loader(r) for r in batch]
        return

    with ThreadPoolExecutor(max_workers=workers) as pool:
        pending = None
        for batch in record_batches:
            futures = [pool.submit(loader, r) for r in batch]
            if pending is not None:
                yield [f.result() for f in pending]
            pending = futures
        if pending is not None:
            yield [f.result() for f in pending]


def in_dev_split(sample_id: str, fraction: float) -> bool:
    """Deterministic hash-based dev membership"""
    digest = hashlib.sha256(sample_id.encode('utf-8')).hexdigest()
    return int(digest[:8], 16) % 10000 < int(round(fraction * 10000))


def split_train_dev(index: CorpusIndex, fraction: float) -> Tuple[CorpusIndex, CorpusIndex]:
    """
    Separate a source corpus into train and dev parts

    Records carrying an explicit split keep it; the rest go to dev when the
    hash of their sample_id falls in the dev fraction.
    """
    def is_dev(r: ManifestRecord) -> bool:
        if r.split is not None:
            return r.split == 'dev'
        return in_dev_split(r.sample_id, fraction)

    dev = index.filter(is_dev, split='dev')
    train = index.filter(lambda r: not is_dev(r), split='train')
    if not train.live or not train.spoof:
        raise ManifestError("train part of the source corpus lacks live or spoof records")
    if not dev.live or not dev.spoof:
        raise ManifestError("dev part of the source corpus lacks live or spoof records")
    return train, dev
