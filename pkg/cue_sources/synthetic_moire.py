# ========================================
# File: cue_sources/synthetic_moire.py
"""Moire labels taken from synthetic moire composites of live crops"""
import numpy as np

from base import CueProvider
from config import SYNTHETIC_MOIRE
from corpus import FaceSample


class SyntheticMoireProvider(CueProvider):
    """Returns the pattern map a synthetic moire sample was built with"""

    def __init__(self):
        super().__init__(name="synthetic", cue='moire')

    def supports(self, sample: FaceSample) -> bool:
        return sample.spoof_type == SYNTHETIC_MOIRE and sample.moire_gt is not None

    def get_map(self, sample: FaceSample) -> np.ndarray:
        if not self.supports(sample):
            raise ValueError(
                f"{sample.source_id} ({sample.label}/{sample.spoof_type}) carries no synthetic moire map"
            )
        return sample.moire_gt
