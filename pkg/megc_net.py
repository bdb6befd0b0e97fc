#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Multi-cue classifier: shared convolutional backbone, multi-auxiliary map
heads (depth, reflection, moire, boundary), multi-feature enrichment
fusion and the binary live/spoof classifier.
"""

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd
import torch
import torch.nn as nn
import torch.nn.functional as F

from config import (
    CUES, SPOOF_CUES, IMAGE_SIZE, IMAGE_CHANNELS, MAP_SIZE,
    FULL_STAGE_WIDTHS, FULL_HEAD_WIDTH, DESK_SCALE_DIVISOR, MAFE_SIZE, MFE_SIZE,
)

logger = logging.getLogger(__name__)

STAGES = ['conv1', 'conv2', 'conv3', 'conv4', 'conv5', 'conv6']
MAFE_STAGES = ['conv3', 'conv4', 'conv5']
MFE_STAGES = ['conv3', 'conv4', 'conv5', 'conv6']


@dataclass
class BackboneConfig:
    """Stage widths and working resolutions of the network"""
    stage_widths: List[int] = field(default_factory=lambda: list(FULL_STAGE_WIDTHS))
    head_width: int = FULL_HEAD_WIDTH
    input_size: int = IMAGE_SIZE
    mafe_size: int = MAFE_SIZE
    mfe_size: int = MFE_SIZE
    map_size: int = MAP_SIZE
    desk_scale: bool = False

    def __post_init__(self):
        if len(self.stage_widths) != len(STAGES):
            raise ValueError(f"expected {len(STAGES)} stage widths, got {len(self.stage_widths)}")
        if self.mafe_size != 2 * self.map_size:
            raise ValueError("mafe_size must be twice map_size (heads downsample once)")

    @classmethod
    def full(cls) -> 'BackboneConfig':
        return cls()

    @classmethod
    def desk(cls) -> 'BackboneConfig':
        return cls(
            stage_widths=[max(1, w // DESK_SCALE_DIVISOR) for w in FULL_STAGE_WIDTHS],
            head_width=FULL_HEAD_WIDTH // DESK_SCALE_DIVISOR,
            desk_scale=True,
        )

    @classmethod
    def tiny(cls) -> 'BackboneConfig':
        """8x8 inputs with 2-channel stages, for numerical gradient checks"""
        return cls(stage_widths=[2] * 6, head_width=2, input_size=8, mafe_size=4, mfe_size=2, map_size=2)

    @classmethod
    def for_scale(cls, desk_scale: bool) -> 'BackboneConfig':
        return cls.desk() if desk_scale else cls.full()


@dataclass
class AuxPredictions:
    """Predicted N x 32 x 32 maps; None for cues removed by ablation"""
    depth_pre: Optional[torch.Tensor] = None
    reflection_pre: Optional[torch.Tensor] = None
    moire_pre: Optional[torch.Tensor] = None
    boundary_pre: Optional[torch.Tensor] = None

    @property
    def maps(self) -> Dict[str, torch.Tensor]:
        return {c: getattr(self, f"{c}_pre") for c in CUES if getattr(self, f"{c}_pre") is not None}


@dataclass
class MEGCOutput:
    logits: torch.Tensor
    aux: AuxPredictions
    fused: torch.Tensor


def conv_stage(in_ch: int, out_ch: int, pool: bool) -> nn.Sequential:
    layers = [nn.Conv2d(in_ch, out_ch, 3, padding=1), nn.BatchNorm2d(out_ch), nn.ReLU(inplace=True)]
    if pool:
        layers.append(nn.MaxPool2d(2, ceil_mode=True))
    return nn.Sequential(*layers)


class Backbone(nn.Module):
    """conv1..conv6; conv2 onwards halve the resolution"""

    def __init__(self, config: BackboneConfig):
        super().__init__()
        self.stages = nn.ModuleDict()
        in_ch = IMAGE_CHANNELS
        for i, (name, width) in enumerate(zip(STAGES, config.stage_widths)):
            self.stages[name] = conv_stage(in_ch, width, pool=i > 0)
            in_ch = width

    def forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        features = {}
        for name, stage in self.stages.items():
            x = stage(x)
            features[name] = x
        return features


class AuxHead(nn.Module):
    """One map branch: feature convs (penultimate at map size) and a map predictor"""

    def __init__(self, in_ch: int, width: int):
        super().__init__()
        self.features = nn.Sequential(
            nn.Conv2d(in_ch, width, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(width, width, 3, stride=2, padding=1), nn.ReLU(inplace=True),
        )
        self.predictor = nn.Sequential(nn.Conv2d(width, 1, 3, padding=1), nn.Sigmoid())

    def forward(self, x: torch.Tensor):
        penultimate = self.features(x)
        return self.predictor(penultimate).squeeze(1), penultimate


def resize_to(x: torch.Tensor, size: int) -> torch.Tensor:
    if x.shape[-2:] == (size, size):
        return x
    return F.interpolate(x, size=(size, size), mode='bilinear', align_corners=False)


class MultiAuxiliaryExtractor(nn.Module):
    """Resize conv3..conv5, concatenate, and run one head per enabled cue"""

    def __init__(self, config: BackboneConfig, cues: Sequence[str]):
        super().__init__()
        self.size = config.mafe_size
        widths = dict(zip(STAGES, config.stage_widths))
        self.in_channels = sum(widths[s] for s in MAFE_STAGES)
        self.heads = nn.ModuleDict({cue: AuxHead(self.in_channels, config.head_width) for cue in cues})

    def concat_features(self, features: Dict[str, torch.Tensor]) -> torch.Tensor:
        missing = [s for s in MAFE_STAGES if s not in features]
        if missing:
            raise ValueError(f"missing backbone stages for MAFE: {missing}")
        return torch.cat([resize_to(features[s], self.size) for s in MAFE_STAGES], dim=1)

    def forward(self, features: Dict[str, torch.Tensor]):
        x = self.concat_features(features)
        preds, penultimate = {}, {}
        for cue, head in self.heads.items():
            preds[cue], penultimate[cue] = head(x)
        return AuxPredictions(**{f"{c}_pre": m for c, m in preds.items()}), penultimate


class MultiFeatureEnrichment(nn.Module):
    """(depth features - projected spoof-cue features) concatenated with resized conv3..conv6"""

    def __init__(self, config: BackboneConfig, spoof_cues: Sequence[str]):
        super().__init__()
        self.size = config.mfe_size
        self.spoof_cues = list(spoof_cues)
        widths = dict(zip(STAGES, config.stage_widths))
        self.backbone_channels = sum(widths[s] for s in MFE_STAGES)
        self.out_channels = config.head_width + self.backbone_channels
        self.projection = (
            nn.Conv2d(config.head_width * len(self.spoof_cues), config.head_width, 1, bias=False)
            if self.spoof_cues else None
        )

    def difference_term(self, aux_features: Dict[str, torch.Tensor]) -> torch.Tensor:
        """Depth branch features minus the fused spoofing features, at MFE resolution"""
        depth = aux_features['depth']
        if self.projection is None:
            return resize_to(depth, self.size)
        spoof = self.projection(torch.cat([aux_features[c] for c in self.spoof_cues], dim=1))
        if spoof.shape[1] != depth.shape[1]:
            raise ValueError(f"projected spoof features have {spoof.shape[1]} channels, depth has {depth.shape[1]}")
        return resize_to(depth - spoof, self.size)

    def forward(self, features: Dict[str, torch.Tensor], aux_features: Dict[str, torch.Tensor]) -> torch.Tensor:
        backbone = torch.cat([resize_to(features[s], self.size) for s in MFE_STAGES], dim=1)
        return torch.cat([self.difference_term(aux_features), backbone], dim=1)


class MEGCNet(nn.Module):
    """Full model; disabled cues have neither a head nor a projection input"""

    def __init__(self, config: Optional[BackboneConfig] = None, enabled_cues: Sequence[str] = tuple(CUES)):
        super().__init__()
        self.config = config or BackboneConfig()
        if 'depth' not in enabled_cues:
            raise ValueError("the depth cue is required")
        self.enabled_cues = [c for c in CUES if c in enabled_cues]
        self.backbone = Backbone(self.config)
        self.mafe = MultiAuxiliaryExtractor(self.config, self.enabled_cues)
        self.mfe = MultiFeatureEnrichment(self.config, [c for c in SPOOF_CUES if c in self.enabled_cues])
        hw = self.config.head_width
        self.classifier = nn.Sequential(
            nn.Conv2d(self.mfe.out_channels, hw, 3, padding=1), nn.ReLU(inplace=True),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(), nn.Linear(hw, 2),
        )

    def check_input(self, x: torch.Tensor) -> None:
        size = self.config.input_size
        if x.dim() != 4 or tuple(x.shape[1:]) != (IMAGE_CHANNELS, size, size):
            raise ValueError(f"expected input N x {IMAGE_CHANNELS} x {size} x {size}, got {tuple(x.shape)}")

    def backbone_forward(self, x: torch.Tensor) -> Dict[str, torch.Tensor]:
        self.check_input(x)
        features = self.backbone(x)
        return {s: features[s] for s in MFE_STAGES}

    def mafe_forward(self, features: Dict[str, torch.Tensor]):
        return self.mafe(features)

    def mfe_forward(self, features: Dict[str, torch.Tensor], aux_features: Dict[str, torch.Tensor]) -> torch.Tensor:
        return self.mfe(features, aux_features)

    def classify(self, fused: torch.Tensor) -> torch.Tensor:
        if fused.dim() != 4 or fused.shape[1] != self.mfe.out_channels:
            raise ValueError(f"fused features must have {self.mfe.out_channels} channels, got {tuple(fused.shape)}")
        return self.classifier(fused)

    def forward(self, x: torch.Tensor) -> MEGCOutput:
        features = self.backbone_forward(x)
        aux, penultimate = self.mafe_forward(features)
        fused = self.mfe_forward(features, penultimate)
        return MEGCOutput(logits=self.classify(fused), aux=aux, fused=fused)


def build_megc_net(desk_scale: bool = False, disabled_cues: Sequence[str] = ()) -> MEGCNet:
    enabled = [c for c in CUES if c not in disabled_cues]
    return MEGCNet(BackboneConfig.for_scale(desk_scale), enabled)


def images_to_tensor(images: Sequence[np.ndarray]) -> torch.Tensor:
    """Stack H x W x 6 images into an N x 6 x H x W float tensor"""
    batch = np.stack([np.asarray(im, dtype=np.float32) for im in images])
    return torch.from_numpy(batch).permute(0, 3, 1, 2).contiguous()


def head_parameter_names(model: MEGCNet, cue: str) -> List[str]:
    prefix = f"mafe.heads.{cue}."
    return [name for name, _ in model.named_parameters() if name.startswith(prefix)]


@torch.no_grad()
def model_summary(model: MEGCNet) -> pd.DataFrame:
    """
    Per-stage output shapes and parameter counts

    Returns:
        DataFrame with columns module, output_shape, params
    """
    was_training = model.training
    model.eval()
    size = model.config.input_size
    x = torch.zeros(1, IMAGE_CHANNELS, size, size)
    features = model.backbone(x)
    aux, penultimate = model.mafe(features)
    fused = model.mfe(features, penultimate)
    logits = model.classifier(fused)
    model.train(was_training)

    def n_params(module: nn.Module) -> int:
        return sum(p.numel() for p in module.parameters())

    rows = [(f"backbone.{s}", tuple(features[s].shape[1:]), n_params(model.backbone.stages[s])) for s in STAGES]
    rows.append(('mafe.concat', (model.mafe.in_channels, model.mafe.size, model.mafe.size), 0))
    for cue, head in model.mafe.heads.items():
        rows.append((f"mafe.heads.{cue}", tuple(aux.maps[cue].shape[1:]), n_params(head)))
    rows.append(('mfe', tuple(fused.shape[1:]), n_params(model.mfe)))
    rows.append(('classifier', tuple(logits.shape[1:]), n_params(model.classifier)))
    df = pd.DataFrame(rows, columns=['module', 'output_shape', 'params'])
    logger.debug("Model has %d parameters", int(df['params'].sum()))
    return df
