# ========================================
# File: cue_sources/dome_depth.py
"""Desk-scale live depth: a raised-cosine dome over the face box"""
import numpy as np

from base import CueProvider
from config import MAP_SIZE
from corpus import FaceSample


class DomeDepthProvider(CueProvider):
    """Pseudo depth for live faces; spoofs are flat (all zeros)"""

    def __init__(self, size: int = MAP_SIZE):
        super().__init__(name="dome", cue='depth')
        self.size = size

    def get_map(self, sample: FaceSample) -> np.ndarray:
        if not sample.is_live:
            return np.zeros((self.size, self.size), dtype=np.float32)

        height, width = sample.image.shape[:2]
        x0, y0, x1, y1 = sample.face_box_in_crop
        sx, sy = self.size / float(width), self.size / float(height)
        cx, cy = (x0 + x1) / 2.0 * sx, (y0 + y1) / 2.0 * sy
        half_w, half_h = (x1 - x0) / 2.0 * sx, (y1 - y0) / 2.0 * sy
        if half_w <= 0 or half_h <= 0:
            return np.zeros((self.size, self.size), dtype=np.float32)

        centers = np.arange(self.size) + 0.5
        u = np.clip((centers - cx) / half_w, -1.0, 1.0)
        v = np.clip((centers - cy) / half_h, -1.0, 1.0)
        dome = np.outer(0.5 * (1.0 + np.cos(np.pi * v)), 0.5 * (1.0 + np.cos(np.pi * u)))
        peak = dome.max()
        if peak > 0:
            dome = dome / peak
        return dome.astype(np.float32)
