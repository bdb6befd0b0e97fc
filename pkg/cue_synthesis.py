#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Synthetic auxiliary supervision: physical moire patterns, moire-augmented
images, cut-paste boundary composites, and per-sample supervision bundles.
"""

import os
import math
import logging
from dataclasses import dataclass, replace
from typing import Dict, List, NamedTuple, Optional, Sequence, Tuple

import cv2
import numpy as np

from base import CueProvider
from config import (
    IMAGE_SIZE, MAP_SIZE, MAP_STRIDE, LIVE, SPOOF, CUES, MOIRE_ALPHA, SYNTHETIC_MOIRE,
    PASTE_SCALE_JITTER, PASTE_SHIFT_JITTER,
    SIMILAR_FREQUENCY_TOLERANCE, SIMILAR_ORIENTATION_TOLERANCE,
    GRATING_FREQUENCY_RANGE, GRATING_FREQUENCY_SPREAD,
)
from corpus import FaceSample, ManifestRecord, stack_rgb_hsv
from utils.image_io import FLOAT_FRAME_SUFFIX, cue_filename, write_cue_map, write_float_frame, write_frame

logger = logging.getLogger(__name__)

NYQUIST = 0.5

Rect = Tuple[int, int, int, int]


class MissingProviderError(LookupError):
    """Raised when a cue has no registered provider for a sample category"""

    def __init__(self, cue: str, category: str = ''):
        self.cue = cue
        suffix = f" (needed for {category} samples)" if category else ''
        super().__init__(f"no provider registered for cue '{cue}'{suffix}")


# ---------------------------------------------------------------------------
# Gratings and moire patterns
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GratingSpec:
    """One sinusoidal interference fringe"""
    frequency: float            # cycles / pixel, in (0, 0.5)
    orientation: float = 0.0    # radians in [0, pi)
    phase: float = 0.0          # radians
    amplitude: float = 1.0      # (0, 1]

    def validate(self) -> None:
        if not 0.0 < self.frequency < NYQUIST:
            raise ValueError(
                f"grating frequency {self.frequency} must lie in (0, {NYQUIST}) cycles/pixel (aliasing)"
            )
        if not 0.0 < self.amplitude <= 1.0:
            raise ValueError(f"grating amplitude {self.amplitude} must lie in (0, 1]")

    @property
    def frequency_vector(self) -> np.ndarray:
        return self.frequency * np.array([math.cos(self.orientation), math.sin(self.orientation)])


def generate_grating(spec: GratingSpec, width: int, height: int) -> np.ndarray:
    """
    Render a sinusoidal grating

    pixel(x, y) = amplitude * 0.5 * (1 + cos(2*pi*f*(x*cos(t) + y*sin(t)) + phase))

    Args:
        spec: Grating parameters
        width: Image width (>= 8)
        height: Image height (>= 8)

    Returns:
        height x width float64 image with values in [0, amplitude]
    """
    spec.validate()
    if width < 8 or height < 8:
        raise ValueError(f"grating size must be at least 8x8, got {width}x{height}")
    y, x = np.mgrid[0:height, 0:width].astype(np.float64)
    arg = 2.0 * np.pi * spec.frequency * (x * math.cos(spec.orientation) + y * math.sin(spec.orientation)) + spec.phase
    return spec.amplitude * 0.5 * (1.0 + np.cos(arg))


def orientation_difference(a: float, b: float) -> float:
    """Smallest angle between two line orientations (modulo pi)"""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def beat_frequency(spec_a: GratingSpec, spec_b: GratingSpec) -> float:
    """Magnitude of the difference frequency of two gratings"""
    ka, kb = spec_a.frequency_vector, spec_b.frequency_vector
    return float(min(np.linalg.norm(ka - kb), np.linalg.norm(ka + kb)))


def check_similar(spec_a: GratingSpec, spec_b: GratingSpec) -> None:
    """Raise unless the two fringes have similar frequency and orientation"""
    df = abs(spec_a.frequency - spec_b.frequency)
    dt = orientation_difference(spec_a.orientation, spec_b.orientation)
    if df > SIMILAR_FREQUENCY_TOLERANCE + 1e-12 or dt > SIMILAR_ORIENTATION_TOLERANCE + 1e-12:
        raise ValueError(
            f"fringes not similar: |df|={df:.4f} (max {SIMILAR_FREQUENCY_TOLERANCE}), "
            f"|dtheta|={dt:.4f} rad (max {SIMILAR_ORIENTATION_TOLERANCE})"
        )


def _rescale_unit(values: np.ndarray) -> np.ndarray:
    lo, hi = float(values.min()), float(values.max())
    if hi - lo < 1e-12:
        return np.zeros_like(values, dtype=np.float64)
    return (values - lo) / (hi - lo)


def synthesize_moire_pattern(
    spec_a: GratingSpec,
    spec_b: GratingSpec,
    size: Tuple[int, int] = (IMAGE_SIZE, IMAGE_SIZE),
) -> np.ndarray:
    """
    Physically motivated moire: product of two similar gratings with the beat isolated

    The product contains the carriers, their sum frequency and the
    low-frequency beat. An ideal radial low-pass with its cutoff midway
    between the beat and the lower carrier keeps only DC and the beat.

    Args:
        spec_a: First grating
        spec_b: Second grating
        size: (height, width)

    Returns:
        height x width moire map in [0, 1]
    """
    check_similar(spec_a, spec_b)
    height, width = size
    product = generate_grating(spec_a, width, height) * generate_grating(spec_b, width, height)

    beat = beat_frequency(spec_a, spec_b)
    carrier = min(spec_a.frequency, spec_b.frequency)
    cutoff = 0.5 * (beat + carrier)

    fy = np.fft.fftfreq(height)[:, None]
    fx = np.fft.fftfreq(width)[None, :]
    radius = np.sqrt(fx ** 2 + fy ** 2)
    spectrum = np.fft.fft2(product)
    spectrum[radius > cutoff] = 0.0
    filtered = np.real(np.fft.ifft2(spectrum))
    return _rescale_unit(filtered)


def random_grating_pair(rng: np.random.Generator) -> Tuple[GratingSpec, GratingSpec]:
    """Draw a similar-frequency grating pair"""
    f_a = rng.uniform(*GRATING_FREQUENCY_RANGE)
    f_b = float(np.clip(f_a + rng.uniform(-GRATING_FREQUENCY_SPREAD, GRATING_FREQUENCY_SPREAD), 0.05, 0.45))
    theta_a = rng.uniform(0.0, math.pi)
    theta_b = (theta_a + rng.uniform(-SIMILAR_ORIENTATION_TOLERANCE, SIMILAR_ORIENTATION_TOLERANCE)) % math.pi
    spec_a = GratingSpec(f_a, theta_a, rng.uniform(0, 2 * math.pi), rng.uniform(0.5, 1.0))
    spec_b = GratingSpec(f_b, theta_b, rng.uniform(0, 2 * math.pi), rng.uniform(0.5, 1.0))
    return spec_a, spec_b


def downsample_map(values: np.ndarray, size: int = MAP_SIZE) -> np.ndarray:
    """Area-average a full-resolution map down to size x size"""
    return cv2.resize(np.asarray(values, dtype=np.float32), (size, size), interpolation=cv2.INTER_AREA)


class MoirePair(NamedTuple):
    """Moire-augmented image with its supervision"""
    image: np.ndarray       # H x W x 6
    moire_gt: np.ndarray    # 32 x 32
    clean: np.ndarray       # the untouched live image, H x W x 6


def composite_moire(live: FaceSample, moire_map: np.ndarray, alpha: float = MOIRE_ALPHA) -> MoirePair:
    """
    Blend a zero-mean moire pattern into a live image

    Args:
        live: Live face sample
        moire_map: Moire pattern in [0, 1] (resized to the image if needed)
        alpha: Blend strength in (0, 1]

    Returns:
        MoirePair(image, moire_gt, clean)
    """
    if live.label != LIVE:
        raise ValueError(f"composite_moire needs a live sample, got {live.label}/{live.spoof_type} ({live.source_id})")
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")

    height, width = live.image.shape[:2]
    pattern = np.asarray(moire_map, dtype=np.float64)
    if pattern.shape != (height, width):
        pattern = cv2.resize(pattern.astype(np.float32), (width, height), interpolation=cv2.INTER_LINEAR).astype(np.float64)

    if float(pattern.max() - pattern.min()) == 0.0:
        centered = np.zeros_like(pattern)
    else:
        centered = pattern - pattern.mean()

    rgb = live.image[..., :3].astype(np.float64) + alpha * centered[..., None]
    image = stack_rgb_hsv(np.clip(rgb, 0.0, 1.0).astype(np.float32))
    moire_gt = _rescale_unit(downsample_map(pattern)).astype(np.float32)
    return MoirePair(image=image, moire_gt=moire_gt, clean=live.image)


def build_moire_pairs(
    live_samples: Sequence[FaceSample],
    pairs_per_sample: int,
    alpha: float,
    seed: int,
) -> List[MoirePair]:
    """Synthetic (image, moire map) training pairs from live samples only"""
    rng = np.random.default_rng(seed)
    pairs = []
    for sample in live_samples:
        if sample.label != LIVE:
            continue
        size = sample.image.shape[:2]
        for _ in range(pairs_per_sample):
            spec_a, spec_b = random_grating_pair(rng)
            pattern = synthesize_moire_pattern(spec_a, spec_b, size)
            pairs.append(composite_moire(sample, pattern, alpha))
    return pairs


def synthetic_moire_sample(live: FaceSample, seed: int, alpha: float = MOIRE_ALPHA) -> FaceSample:
    """
    Spoof-labelled copy of a live crop carrying a random synthetic moire pattern

    The pattern's 32x32 map travels on the sample as ``moire_gt``; these are
    the only moire targets when real replay supervision is switched off.
    """
    rng = np.random.default_rng(seed)
    spec_a, spec_b = random_grating_pair(rng)
    pair = composite_moire(live, synthesize_moire_pattern(spec_a, spec_b, live.image.shape[:2]), alpha)
    return FaceSample(
        image=pair.image,
        label=SPOOF,
        spoof_type=SYNTHETIC_MOIRE,
        source_id=f"{live.source_id}+moire{seed}",
        face_box=live.face_box,
        crop_box=live.crop_box,
        video_id=live.video_id,
        moire_gt=pair.moire_gt,
    )


# ---------------------------------------------------------------------------
# Boundary composites
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PasteGeometry:
    """Target rectangle (x0, y0, x1, y1) in the live crop plus a jitter seed"""
    rect: Tuple[float, float, float, float]
    seed: Optional[int] = None


class BoundaryComposite(NamedTuple):
    sample: FaceSample
    boundary_gt: np.ndarray     # 32 x 32, {0, 1}
    rect: Rect                  # pasted rectangle after jitter and clipping


def jitter_rect(geometry: PasteGeometry, width: int = IMAGE_SIZE, height: int = IMAGE_SIZE) -> Rect:
    """Apply seeded scale/translation jitter to the paste rectangle and clip it"""
    x0, y0, x1, y1 = geometry.rect
    cx, cy = (x0 + x1) / 2.0, (y0 + y1) / 2.0
    w, h = x1 - x0, y1 - y0
    if geometry.seed is not None:
        rng = np.random.default_rng(geometry.seed)
        scale = rng.uniform(*PASTE_SCALE_JITTER)
        dx, dy = rng.integers(-PASTE_SHIFT_JITTER, PASTE_SHIFT_JITTER + 1, size=2)
        w, h = w * scale, h * scale
        cx, cy = cx + dx, cy + dy

    nx0 = int(np.clip(round(cx - w / 2.0), 0, width))
    ny0 = int(np.clip(round(cy - h / 2.0), 0, height))
    nx1 = int(np.clip(round(cx + w / 2.0), 0, width))
    ny1 = int(np.clip(round(cy + h / 2.0), 0, height))
    if nx1 <= nx0 or ny1 <= ny0:
        raise ValueError(f"degenerate paste region {geometry.rect} -> {(nx0, ny0, nx1, ny1)}")
    return nx0, ny0, nx1, ny1


def mask_to_boundary_map(mask: np.ndarray, stride: int = MAP_STRIDE) -> np.ndarray:
    """Majority vote of every stride x stride block: 1 when strictly more than half is inside"""
    h, w = mask.shape
    blocks = mask.reshape(h // stride, stride, w // stride, stride).astype(np.float64)
    return (blocks.mean(axis=(1, 3)) > 0.5).astype(np.float32)


def default_paste_geometry(live: FaceSample, seed: Optional[int] = None) -> PasteGeometry:
    """Paste over the live face region of the crop"""
    return PasteGeometry(rect=live.face_box_in_crop, seed=seed)


def composite_boundary(live: FaceSample, spoof: FaceSample, geometry: PasteGeometry) -> BoundaryComposite:
    """
    Cut the spoof face out and paste it over the live crop

    Args:
        live: Live sample receiving the paste
        spoof: Spoof sample providing the face region
        geometry: Target rectangle and jitter seed

    Returns:
        BoundaryComposite(sample, boundary_gt, rect)
    """
    if live.label != LIVE:
        raise ValueError(f"composite_boundary needs a live target, got {live.label} ({live.source_id})")
    if spoof.label == LIVE:
        raise ValueError(f"composite_boundary needs a spoof source, got live ({spoof.source_id})")

    height, width = live.image.shape[:2]
    sx0, sy0, sx1, sy1 = spoof.face_box_in_crop
    sx0, sy0 = int(math.floor(sx0)), int(math.floor(sy0))
    sx1, sy1 = int(math.ceil(sx1)), int(math.ceil(sy1))
    if sx1 <= sx0 or sy1 <= sy0:
        raise ValueError(f"degenerate spoof face region in {spoof.source_id}")
    region = np.ascontiguousarray(spoof.image[sy0:sy1, sx0:sx1, :3])

    x0, y0, x1, y1 = jitter_rect(geometry, width, height)
    pasted = cv2.resize(region, (x1 - x0, y1 - y0), interpolation=cv2.INTER_LINEAR)

    rgb = live.image[..., :3].copy()
    rgb[y0:y1, x0:x1] = pasted
    mask = np.zeros((height, width), dtype=np.uint8)
    mask[y0:y1, x0:x1] = 1
    boundary_gt = mask_to_boundary_map(mask, height // MAP_SIZE)

    source_type = spoof.source_spoof_type if spoof.spoof_type == 'composite' else spoof.spoof_type
    seed_tag = 'x' if geometry.seed is None else str(geometry.seed)
    sample = FaceSample(
        image=stack_rgb_hsv(rgb),
        label=spoof.label,
        spoof_type='composite',
        source_id=f"{live.source_id}+{spoof.source_id}-{seed_tag}",
        face_box=(x0, y0, x1 - x0, y1 - y0),
        crop_box=(0, 0, width, height),
        source_spoof_type=source_type,
        video_id=live.video_id,
        boundary_gt=boundary_gt,
    )
    return BoundaryComposite(sample=sample, boundary_gt=boundary_gt, rect=(x0, y0, x1, y1))


# ---------------------------------------------------------------------------
# Supervision bundles
# ---------------------------------------------------------------------------

class CueValidity(NamedTuple):
    """Per-cue loss participation flags"""
    depth: bool
    reflection: bool
    moire: bool
    boundary: bool


def validity_for(
    label: str,
    spoof_type: str,
    source_spoof_type: Optional[str] = None,
    real_moire: bool = True,
) -> CueValidity:
    """
    Validity table as a pure function of the sample category

    live -> (T, T, T, T); print -> (T, T, F, F); replay -> (T, T, T, F);
    composite -> (T, T, moire of its source, T); synthetic moire -> (T, T, T, F).
    With real_moire off, replay-derived samples leave the moire loss and only
    synthetic moire samples supervise it.
    """
    if label == LIVE:
        return CueValidity(True, True, True, True)
    if spoof_type == 'print':
        return CueValidity(True, True, False, False)
    if spoof_type == 'replay':
        return CueValidity(True, True, real_moire, False)
    if spoof_type == 'composite':
        inherited = real_moire and source_spoof_type == 'replay'
        return CueValidity(True, True, inherited, True)
    if spoof_type == SYNTHETIC_MOIRE:
        return CueValidity(True, True, True, False)
    raise ValueError(f"unknown sample category {label}/{spoof_type}")


@dataclass
class SupervisionBundle:
    """Ground-truth maps for the four cues plus their validity flags"""
    depth_gt: np.ndarray
    reflection_gt: np.ndarray
    moire_gt: np.ndarray
    boundary_gt: np.ndarray
    validity: CueValidity

    def __post_init__(self):
        for cue in CUES:
            values = getattr(self, f"{cue}_gt")
            if values.shape != (MAP_SIZE, MAP_SIZE):
                raise ValueError(f"{cue} map must be {MAP_SIZE}x{MAP_SIZE}, got {values.shape}")
        if not np.isin(self.boundary_gt, (0.0, 1.0)).all():
            raise ValueError("boundary map must be binary")

    def map_for(self, cue: str) -> np.ndarray:
        return getattr(self, f"{cue}_gt")

    def maps(self) -> Dict[str, np.ndarray]:
        return {cue: self.map_for(cue) for cue in CUES}


def _zeros() -> np.ndarray:
    return np.zeros((MAP_SIZE, MAP_SIZE), dtype=np.float32)


def _provider_map(provider: Optional[CueProvider], cue: str, sample: FaceSample) -> np.ndarray:
    if provider is None:
        raise MissingProviderError(cue, f"{sample.label}/{sample.spoof_type}")
    values = np.asarray(provider.get_map(sample), dtype=np.float32)
    if values.shape != (MAP_SIZE, MAP_SIZE):
        raise ValueError(f"{provider.name} returned a {values.shape} {cue} map for {sample.source_id}")
    return np.clip(values, 0.0, 1.0)


def supervision_for_sample(
    sample: FaceSample,
    depth_provider: Optional[CueProvider],
    reflection_provider: Optional[CueProvider],
    moire_provider: Optional[CueProvider],
    enabled_cues: Sequence[str] = tuple(CUES),
    real_moire: bool = True,
) -> SupervisionBundle:
    """
    Assemble a sample's SupervisionBundle

    Live samples: provider depth, all other maps zero, every cue valid.
    Spoof samples: zero depth, provider reflection, provider moire only for
    replay-derived or synthetic moire samples, boundary only for composites.
    Cues outside enabled_cues are filled with zeros and need no provider.

    Args:
        sample: Prepared face sample
        depth_provider: Depth map provider (live samples)
        reflection_provider: Reflection map provider (spoof samples)
        moire_provider: Moire map provider (replay-derived samples)
        enabled_cues: Cues the model trains on
        real_moire: Whether replay-derived samples supervise the moire cue

    Returns:
        SupervisionBundle
    """
    validity = validity_for(sample.label, sample.spoof_type, sample.source_spoof_type, real_moire)
    maps = {cue: _zeros() for cue in CUES}

    if sample.label == LIVE:
        if 'depth' in enabled_cues:
            maps['depth'] = _provider_map(depth_provider, 'depth', sample)
        return SupervisionBundle(validity=validity, **{f"{c}_gt": m for c, m in maps.items()})

    if 'reflection' in enabled_cues:
        maps['reflection'] = _provider_map(reflection_provider, 'reflection', sample)
    if 'moire' in enabled_cues and validity.moire:
        maps['moire'] = _provider_map(moire_provider, 'moire', sample)
    if 'boundary' in enabled_cues and sample.spoof_type == 'composite':
        if sample.boundary_gt is None:
            raise MissingProviderError('boundary', f"composite {sample.source_id}")
        maps['boundary'] = np.asarray(sample.boundary_gt, dtype=np.float32)
    return SupervisionBundle(validity=validity, **{f"{c}_gt": m for c, m in maps.items()})


# ---------------------------------------------------------------------------
# Offline cue files
# ---------------------------------------------------------------------------

def make_composites(
    live_samples: Sequence[FaceSample],
    spoof_samples: Sequence[FaceSample],
    count: int,
    seed: int,
) -> List[BoundaryComposite]:
    """Draw count random (live, spoof) pairs and composite them with seeded jitter"""
    if not live_samples or not spoof_samples:
        raise ValueError("composites need live and spoof samples")
    rng = np.random.default_rng(seed)
    composites = []
    for _ in range(count):
        live = live_samples[int(rng.integers(len(live_samples)))]
        spoof = spoof_samples[int(rng.integers(len(spoof_samples)))]
        paste_seed = int(rng.integers(0, 2 ** 31 - 1))
        composites.append(composite_boundary(live, spoof, default_paste_geometry(live, paste_seed)))
    return composites


def write_synthetic_cues(
    records: Sequence[ManifestRecord],
    samples: Sequence[FaceSample],
    out_dir: str,
    depth_provider: CueProvider,
    composites_per_spoof: int,
    seed: int,
) -> List[ManifestRecord]:
    """
    Write depth maps for live samples plus boundary composites, returning updated records

    Each composite is stored twice: an 8-bit PNG preview and a float32 .npy
    frame that the returned record points at.

    Args:
        records: Source manifest records, aligned with samples
        samples: Loaded samples
        out_dir: Output directory (cues/ and composites/ are created inside)
        depth_provider: Provider used for live depth maps
        composites_per_spoof: Composites generated per original spoof
        seed: Composite seed

    Returns:
        Updated record list (originals with cue paths, then composites)
    """
    cue_dir = os.path.join(out_dir, 'cues')
    comp_dir = os.path.join(out_dir, 'composites')
    updated = []
    for record, sample in zip(records, samples):
        cues = record.cue_paths
        if sample.label == LIVE:
            path = os.path.join(cue_dir, cue_filename(record.sample_id, 'depth'))
            write_cue_map(path, depth_provider.get_map(sample), 'depth')
            cues['depth'] = path
        updated.append(replace(record, cues=tuple(sorted(cues.items()))))

    live = [s for s in samples if s.label == LIVE]
    spoof = [s for s in samples if s.label != LIVE and s.spoof_type != 'composite']
    count = composites_per_spoof * len(spoof)
    if count and live and spoof:
        for composite in make_composites(live, spoof, count, seed):
            sample = composite.sample
            preview_path = os.path.join(comp_dir, f"{sample.source_id}.png")
            image_path = os.path.join(comp_dir, f"{sample.source_id}{FLOAT_FRAME_SUFFIX}")
            boundary_path = os.path.join(cue_dir, cue_filename(sample.source_id, 'boundary'))
            write_frame(preview_path, sample.image[..., :3])
            # records point at the unquantized copy
            write_float_frame(image_path, sample.image[..., :3])
            write_cue_map(boundary_path, composite.boundary_gt, 'boundary')
            updated.append(ManifestRecord(
                path=image_path,
                label=sample.label,
                spoof_type='composite',
                face_box=sample.face_box,
                sample_id=sample.source_id,
                video_id=sample.video_id,
                prepared=True,
                source_spoof_type=sample.source_spoof_type,
                cues=(('boundary', boundary_path),),
            ))
    logger.info("Wrote cue files for %d records (%d composites) to %s",
                len(records), len(updated) - len(records), out_dir)
    return updated
