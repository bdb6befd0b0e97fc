"""Base class for cue ground-truth providers"""
from abc import ABC, abstractmethod
from typing import TYPE_CHECKING

import numpy as np

if TYPE_CHECKING:
    from corpus import FaceSample


class CueProvider(ABC):
    """Abstract base class for auxiliary-map providers (depth, reflection, moire)"""

    def __init__(self, name: str, cue: str):
        self.name = name
        self.cue = cue

    @abstractmethod
    def get_map(self, sample: 'FaceSample') -> np.ndarray:
        """Return the 32x32 ground-truth map in [0, 1] for a sample"""
        pass

    def supports(self, sample: 'FaceSample') -> bool:
        """
        Return True if this provider can label the given sample.
        Default implementation accepts every sample.
        Override this for providers that depend on per-sample files.

        Args:
            sample: Prepared face sample

        Returns:
            True if get_map() is expected to succeed
        """
        return True

    def __repr__(self) -> str:
        return f"{type(self).__name__}(name={self.name!r}, cue={self.cue!r})"
