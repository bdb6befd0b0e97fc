# File: views/maps_view.py
"""PNG panels of the input crop next to each predicted auxiliary map"""

import os
import logging
from typing import Dict, Sequence

import cv2
import numpy as np
import torch

from config import CUES
from corpus import FaceSample
from trainer import batch_inputs
from utils.image_io import write_panel

logger = logging.getLogger(__name__)

TILE = 128


def _tile_rgb(image: np.ndarray) -> np.ndarray:
    rgb = np.clip(np.rint(image[..., :3] * 255.0), 0, 255).astype(np.uint8)
    return cv2.resize(rgb, (TILE, TILE), interpolation=cv2.INTER_AREA)


def _tile_map(values: np.ndarray) -> np.ndarray:
    gray = np.clip(np.rint(np.asarray(values) * 255.0), 0, 255).astype(np.uint8)
    gray = cv2.resize(gray, (TILE, TILE), interpolation=cv2.INTER_NEAREST)
    return np.repeat(gray[..., None], 3, axis=2)


def compose_panel(image: np.ndarray, maps: Dict[str, np.ndarray]) -> np.ndarray:
    """Crop followed by one tile per cue (blank tile for removed cues)"""
    tiles = [_tile_rgb(image)]
    for cue in CUES:
        tiles.append(_tile_map(maps[cue]) if cue in maps else np.full((TILE, TILE, 3), 64, np.uint8))
    return np.concatenate(tiles, axis=1)


@torch.no_grad()
def write_map_panels(model, samples: Sequence[FaceSample], out_dir: str) -> int:
    """
    Write <sample_id>.maps.png for each sample

    Args:
        model: Trained MEGCNet
        samples: Samples to visualize
        out_dir: Output directory

    Returns:
        Number of panels written
    """
    model.eval()
    for sample in samples:
        out = model(batch_inputs([sample], model.config.input_size))
        maps = {cue: m[0].cpu().numpy() for cue, m in out.aux.maps.items()}
        write_panel(os.path.join(out_dir, f"{sample.source_id}.maps.png"), compose_panel(sample.image, maps))
    logger.info("Wrote %d map panels to %s", len(samples), out_dir)
    return len(samples)
