# ========================================
# File: cue_sources/moire_net.py
"""Moire labels for replay spoofs, produced by a trained moire estimator"""
import logging
import threading

import numpy as np

from base import CueProvider
from corpus import FaceSample
from moire_estimator import MoireNet, extract_moire_map, extract_residual_map
from utils.lru_cache import LRUCache

logger = logging.getLogger(__name__)

MAP_CACHE_BYTES = 32 * 1024 ** 2


class MoireNetProvider(CueProvider):
    """Full estimator output (residual -> adaptation -> refinement)"""

    def __init__(self, net: MoireNet, name: str = "moire_net", cache_bytes: int = MAP_CACHE_BYTES):
        super().__init__(name=name, cue='moire')
        self.net = net
        # keyed by source id; online composites carry unique ids, so the LRU bound matters
        self._cache: LRUCache[np.ndarray] = LRUCache(cache_bytes, lambda values: values.nbytes)
        self._net_lock = threading.Lock()

    def _extract(self, image: np.ndarray) -> np.ndarray:
        return extract_moire_map(self.net, image)

    def _locked_extract(self, image: np.ndarray) -> np.ndarray:
        with self._net_lock:
            return self._extract(image)

    def get_map(self, sample: FaceSample) -> np.ndarray:
        return self._cache.get_or_compute(sample.source_id, lambda: self._locked_extract(sample.image))


class ResidualMoireProvider(MoireNetProvider):
    """Demoire residual alone, without the learned adaptation and refinement"""

    def __init__(self, net: MoireNet, cache_bytes: int = MAP_CACHE_BYTES):
        super().__init__(net, name="residual", cache_bytes=cache_bytes)

    def _extract(self, image: np.ndarray) -> np.ndarray:
        return extract_residual_map(self.net, image)
