# ========================================
# File: cue_sources/zero_map.py
"""All-zero maps (reflection default when no estimates are available)"""
import numpy as np

from base import CueProvider
from config import MAP_SIZE
from corpus import FaceSample


class ZeroMapProvider(CueProvider):

    def __init__(self, cue: str, size: int = MAP_SIZE):
        super().__init__(name="zeros", cue=cue)
        self.size = size

    def get_map(self, sample: FaceSample) -> np.ndarray:
        return np.zeros((self.size, self.size), dtype=np.float32)
