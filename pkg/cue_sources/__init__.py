"""Cue ground-truth providers"""
from typing import Dict, Optional

from base import CueProvider
from cue_synthesis import MissingProviderError
from moire_estimator import MoireNet
from utils.run_config import CueConfig

from .dome_depth import DomeDepthProvider
from .zero_map import ZeroMapProvider
from .file_maps import FileMapProvider
from .moire_net import MoireNetProvider, ResidualMoireProvider
from .synthetic_moire import SyntheticMoireProvider

CUE_SOURCES = {
    'depth': {
        'dome': lambda cfg, net: DomeDepthProvider(),
        'files': lambda cfg, net: FileMapProvider('depth', cfg.cue_dir),
    },
    'reflection': {
        'zeros': lambda cfg, net: ZeroMapProvider('reflection'),
        'files': lambda cfg, net: FileMapProvider('reflection', cfg.cue_dir),
    },
    'moire': {
        'moire_net': lambda cfg, net: MoireNetProvider(net) if net is not None else None,
        'residual': lambda cfg, net: ResidualMoireProvider(net) if net is not None else None,
        'files': lambda cfg, net: FileMapProvider('moire', cfg.cue_dir),
        'synthetic': lambda cfg, net: SyntheticMoireProvider(),
    },
}


def build_providers(cues: CueConfig, moire_net: Optional[MoireNet] = None) -> Dict[str, Optional[CueProvider]]:
    """
    Instantiate the configured provider for each map-providing cue

    The moire entry is None when it needs an estimator and none was given;
    supervision_for_sample() reports it when a replay sample asks for it.
    """
    providers = {}
    for cue, choice in (('depth', cues.depth), ('reflection', cues.reflection), ('moire', cues.moire)):
        if choice not in CUE_SOURCES[cue]:
            raise MissingProviderError(cue, f"unknown source '{choice}'")
        providers[cue] = CUE_SOURCES[cue][choice](cues, moire_net)
    return providers


__all__ = [
    'CUE_SOURCES', 'build_providers',
    'DomeDepthProvider', 'ZeroMapProvider', 'FileMapProvider',
    'MoireNetProvider', 'ResidualMoireProvider', 'SyntheticMoireProvider',
]
