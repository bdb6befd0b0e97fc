#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""Image and cue-map file codecs (PNG/JPEG frames, 16-bit and binary cue PNGs)"""

import os
import logging

import cv2
import numpy as np

logger = logging.getLogger(__name__)

MAP_SCALE_16BIT = 65535.0
FLOAT_FRAME_SUFFIX = ".npy"


def read_frame(path: str) -> np.ndarray:
    """
    Read a PNG or JPEG frame, or a float .npy frame, as RGB float32 in [0, 1]

    Args:
        path: Image file path

    Returns:
        H x W x 3 array
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Image not found: {path}")
    if path.endswith(FLOAT_FRAME_SUFFIX):
        rgb = np.load(path, allow_pickle=False)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise ValueError(f"Float frame must be H x W x 3, got {rgb.shape}: {path}")
        return np.clip(rgb, 0.0, 1.0).astype(np.float32)
    bgr = cv2.imread(path, cv2.IMREAD_COLOR)
    if bgr is None:
        raise ValueError(f"Unreadable image file: {path}")
    rgb = cv2.cvtColor(bgr, cv2.COLOR_BGR2RGB)
    return rgb.astype(np.float32) / 255.0


def write_frame(path: str, rgb: np.ndarray) -> None:
    """Write an RGB float image in [0, 1] as 8-bit PNG"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    data = np.clip(np.rint(np.asarray(rgb)[..., :3] * 255.0), 0, 255).astype(np.uint8)
    if not cv2.imwrite(path, cv2.cvtColor(data, cv2.COLOR_RGB2BGR)):
        raise IOError(f"Failed to write image: {path}")


def write_float_frame(path: str, rgb: np.ndarray) -> None:
    """Write an RGB float image without quantization (.npy, float32)"""
    if not path.endswith(FLOAT_FRAME_SUFFIX):
        raise ValueError(f"Float frames use the {FLOAT_FRAME_SUFFIX} suffix: {path}")
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    np.save(path, np.clip(np.asarray(rgb, dtype=np.float32)[..., :3], 0.0, 1.0), allow_pickle=False)


def cue_filename(sample_id: str, cue: str) -> str:
    """Paired cue file name: <sample_id>.<cue>.png"""
    return f"{sample_id}.{cue}.png"


def write_cue_map(path: str, cue_map: np.ndarray, cue: str) -> None:
    """
    Persist a cue map as a single-channel PNG

    Boundary maps are stored as 8-bit {0, 255}; every other cue as 16-bit
    with linear [0, 1] <-> [0, 65535] scaling.

    Args:
        path: Output file path
        cue_map: 2-D map in [0, 1]
        cue: Cue name
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    values = np.clip(np.asarray(cue_map, dtype=np.float64), 0.0, 1.0)
    if values.ndim != 2:
        raise ValueError(f"Cue map must be 2-D, got shape {values.shape}")
    if cue == 'boundary':
        data = np.where(values >= 0.5, 255, 0).astype(np.uint8)
    else:
        data = np.rint(values * MAP_SCALE_16BIT).astype(np.uint16)
    if not cv2.imwrite(path, data):
        raise IOError(f"Failed to write cue map: {path}")


def read_cue_map(path: str, cue: str) -> np.ndarray:
    """
    Read a cue map written by write_cue_map()

    Args:
        path: PNG path
        cue: Cue name

    Returns:
        2-D float32 map in [0, 1] ({0, 1} for boundary maps)
    """
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Cue map not found: {path}")
    data = cv2.imread(path, cv2.IMREAD_UNCHANGED)
    if data is None:
        raise ValueError(f"Unreadable cue map: {path}")
    if data.ndim == 3:
        data = data[..., 0]
    if cue == 'boundary':
        return (data >= 128).astype(np.float32)
    if data.dtype == np.uint16:
        return (data.astype(np.float64) / MAP_SCALE_16BIT).astype(np.float32)
    # 8-bit maps dropped in by hand
    return (data.astype(np.float64) / 255.0).astype(np.float32)


def write_panel(path: str, panel: np.ndarray) -> None:
    """Write an already composed uint8 RGB panel"""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if not cv2.imwrite(path, cv2.cvtColor(panel, cv2.COLOR_RGB2BGR)):
        raise IOError(f"Failed to write panel: {path}")
