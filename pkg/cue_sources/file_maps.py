# ========================================
# File: cue_sources/file_maps.py
"""Maps read from <sample_id>.<cue>.png files (precomputed PRNet-style estimates)"""
import os
import logging
from typing import Optional

import cv2
import numpy as np

from base import CueProvider
from config import MAP_SIZE
from corpus import FaceSample
from utils.image_io import cue_filename, read_cue_map

logger = logging.getLogger(__name__)


class FileMapProvider(CueProvider):
    """
    Reads cue maps from disk

    The path listed in the sample's manifest cues entry wins; otherwise
    <cue_dir>/<sample_id>.<cue>.png is used.
    """

    def __init__(self, cue: str, cue_dir: Optional[str] = None, size: int = MAP_SIZE):
        super().__init__(name="files", cue=cue)
        self.cue_dir = cue_dir
        self.size = size

    def path_for(self, sample: FaceSample) -> Optional[str]:
        if self.cue in sample.cue_paths:
            return sample.cue_paths[self.cue]
        if self.cue_dir:
            return os.path.join(self.cue_dir, cue_filename(sample.source_id, self.cue))
        return None

    def supports(self, sample: FaceSample) -> bool:
        path = self.path_for(sample)
        return path is not None and os.path.isfile(path)

    def get_map(self, sample: FaceSample) -> np.ndarray:
        path = self.path_for(sample)
        if path is None:
            raise FileNotFoundError(f"no {self.cue} map configured for {sample.source_id}")
        values = read_cue_map(path, self.cue)
        if values.shape != (self.size, self.size):
            logger.debug("Resizing %s map %s from %s", self.cue, path, values.shape)
            values = cv2.resize(values, (self.size, self.size), interpolation=cv2.INTER_AREA)
        return values.astype(np.float32)
