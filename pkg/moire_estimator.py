#!/usr/bin/env python3
# -*- coding: utf-8 -*-
"""
Moire-map extraction network

A demoire backbone removes the moire from the input; the residual
(input - demoired) passes through two learnable 3x3 adaptation convolutions
and two 3x3 refinement convolutions, and is pooled to a 32x32 map.
"""

import logging
from dataclasses import asdict
from typing import Callable, Dict, List, Sequence, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F
from tqdm import tqdm

from config import IMAGE_SIZE, IMAGE_CHANNELS, MAP_SIZE
from cue_synthesis import MoirePair
from utils.checkpoint import load_checkpoint, restore_model, save_checkpoint
from utils.run_config import MoireNetConfig, MoireTrainSettings

logger = logging.getLogger(__name__)

DEMOIRE_BACKBONES: Dict[str, Callable[[MoireNetConfig], nn.Module]] = {}


def register_backbone(name: str):
    """Decorator adding a backbone factory to DEMOIRE_BACKBONES"""
    def wrap(factory):
        DEMOIRE_BACKBONES[name] = factory
        return factory
    return wrap


class EncoderDecoderDemoire(nn.Module):
    """Small residual encoder-decoder: demoire(x) = x - decoder(encoder(x))"""

    def __init__(self, widths: Sequence[int], channels: int = IMAGE_CHANNELS):
        super().__init__()
        enc, dec = [], []
        in_ch = channels
        for w in widths:
            enc += [nn.Conv2d(in_ch, w, 3, stride=2, padding=1), nn.ReLU(inplace=True)]
            in_ch = w
        for w in list(reversed(widths))[1:] + [channels]:
            dec += [nn.ConvTranspose2d(in_ch, w, 4, stride=2, padding=1)]
            if w != channels:
                dec.append(nn.ReLU(inplace=True))
            in_ch = w
        self.encoder = nn.Sequential(*enc)
        self.decoder = nn.Sequential(*dec)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x - self.decoder(self.encoder(x))


class IdentityDemoire(nn.Module):
    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return x


@register_backbone('encoder_decoder')
def _encoder_decoder(config: MoireNetConfig) -> nn.Module:
    return EncoderDecoderDemoire(config.backbone_widths)


@register_backbone('identity')
def _identity(config: MoireNetConfig) -> nn.Module:
    return IdentityDemoire()


class MoireNet(nn.Module):
    """Frozen (or jointly trained) demoire backbone + adaptation + refinement"""

    def __init__(self, config: MoireNetConfig, backbone: nn.Module):
        super().__init__()
        self.config = config
        self.backbone = backbone
        w, r = config.adapt_width, config.refine_width
        self.adapt = nn.Sequential(
            nn.Conv2d(IMAGE_CHANNELS, w, 3, stride=2, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(w, w, 3, stride=2, padding=1), nn.ReLU(inplace=True),
        )
        refine_in = w + IMAGE_CHANNELS if config.refine_with_input else w
        self.refine = nn.Sequential(
            nn.Conv2d(refine_in, r, 3, padding=1), nn.ReLU(inplace=True),
            nn.Conv2d(r, 1, 3, padding=1),
        )
        self.pool = nn.AdaptiveAvgPool2d(config.output_size)
        if config.freeze_backbone:
            self.freeze_backbone()

    def freeze_backbone(self) -> None:
        for p in self.backbone.parameters():
            p.requires_grad_(False)
        self.backbone.eval()

    @property
    def backbone_frozen(self) -> bool:
        return all(not p.requires_grad for p in self.backbone.parameters())

    def train(self, mode: bool = True) -> 'MoireNet':
        super().train(mode)
        if self.backbone_frozen:
            self.backbone.eval()
        return self

    def forward_residual(self, x: torch.Tensor) -> torch.Tensor:
        """Full-resolution residual input - demoire(input)"""
        return x - self.backbone(x)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        residual = self.forward_residual(x)
        h = self.adapt(residual)
        if self.config.refine_with_input:
            h = torch.cat([h, F.interpolate(x, size=h.shape[-2:], mode='bilinear', align_corners=False)], dim=1)
        out = self.pool(self.refine(h))
        return torch.sigmoid(out).squeeze(1)


def build_moire_net(config: MoireNetConfig) -> MoireNet:
    """Instantiate the estimator with the configured backbone plugin"""
    if config.demoire_backbone not in DEMOIRE_BACKBONES:
        raise ValueError(
            f"unknown demoire backbone '{config.demoire_backbone}' "
            f"(registered: {', '.join(sorted(DEMOIRE_BACKBONES))})"
        )
    net = MoireNet(config, DEMOIRE_BACKBONES[config.demoire_backbone](config))
    logger.debug("Built moire net: %d trainable parameters",
                 sum(p.numel() for p in net.parameters() if p.requires_grad))
    return net


def _to_tensor(images: Sequence[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack([np.asarray(im, dtype=np.float32) for im in images])).permute(0, 3, 1, 2).contiguous()


def _pair_batches(n: int, batch_size: int, steps: int, rng: np.random.Generator):
    order = np.array([], dtype=np.int64)
    for _ in range(steps):
        if len(order) < batch_size:
            order = np.concatenate([order, rng.permutation(n)])
        batch, order = order[:batch_size], order[batch_size:]
        yield batch


def pretrain_backbone(
    net: MoireNet,
    pairs: Sequence[MoirePair],
    settings: MoireTrainSettings,
    freeze: bool = True,
) -> List[float]:
    """
    Train the demoire backbone to map moire images to their clean originals

    Args:
        net: Estimator whose backbone is trained in place
        pairs: Synthetic moire pairs
        settings: Optimizer settings (pretrain_steps, batch_size, lr, seed)
        freeze: Freeze the backbone afterwards

    Returns:
        Per-step reconstruction losses
    """
    params = list(net.backbone.parameters())
    if not pairs:
        raise ValueError("empty moire pair stream")
    if not params or settings.pretrain_steps == 0:
        if freeze:
            net.freeze_backbone()
        return []

    torch.manual_seed(settings.seed)
    for p in params:
        p.requires_grad_(True)
    net.backbone.train()
    optimizer = torch.optim.Adam(params, lr=settings.lr)
    rng = np.random.default_rng(settings.seed)
    history = []
    for idx in tqdm(_pair_batches(len(pairs), settings.batch_size, settings.pretrain_steps, rng),
                    total=settings.pretrain_steps, desc='pretrain demoire', leave=False):
        x = _to_tensor([pairs[i].image for i in idx])
        clean = _to_tensor([pairs[i].clean for i in idx])
        loss = F.mse_loss(net.backbone(x), clean)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(float(loss.detach()))
    if freeze:
        net.freeze_backbone()
    logger.info("Demoire backbone pretrained: loss %.5f -> %.5f", history[0], history[-1])
    return history


def train_moire_net(
    net: MoireNet,
    pairs: Sequence[MoirePair],
    settings: MoireTrainSettings,
) -> Tuple[MoireNet, List[float]]:
    """
    Fit the estimator to synthetic (image, moire map) pairs with MSE

    Args:
        net: Estimator from build_moire_net()
        pairs: Pairs built by composite_moire() from live images
        settings: Optimizer settings

    Returns:
        (net, per-step loss history)
    """
    if not pairs:
        raise ValueError("empty moire pair stream")
    trainable = [p for p in net.parameters() if p.requires_grad]
    if not trainable:
        raise ValueError("moire net has no trainable parameters")

    torch.manual_seed(settings.seed)
    rng = np.random.default_rng(settings.seed)
    optimizer = torch.optim.Adam(trainable, lr=settings.lr)
    net.train()
    history = []
    for idx in tqdm(_pair_batches(len(pairs), settings.batch_size, settings.steps, rng),
                    total=settings.steps, desc='train moire', leave=False):
        x = _to_tensor([pairs[i].image for i in idx])
        gt = torch.from_numpy(np.stack([pairs[i].moire_gt for i in idx]).astype(np.float32))
        loss = F.mse_loss(net(x), gt)
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        history.append(float(loss.detach()))
    net.eval()
    logger.info("Moire net trained for %d steps: loss %.5f -> %.5f", len(history), history[0], history[-1])
    return net, history


def _check_image(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float32)
    if image.shape != (IMAGE_SIZE, IMAGE_SIZE, IMAGE_CHANNELS):
        raise ValueError(
            f"moire extraction needs a {IMAGE_SIZE}x{IMAGE_SIZE}x{IMAGE_CHANNELS} image, got {image.shape}"
        )
    return image


@torch.no_grad()
def extract_moire_map(net: MoireNet, image: np.ndarray) -> np.ndarray:
    """Single deterministic forward pass -> 32x32 map in [0, 1]"""
    x = _to_tensor([_check_image(image)])
    net.eval()
    return net(x)[0].clamp(0.0, 1.0).cpu().numpy()


@torch.no_grad()
def extract_residual_map(net: MoireNet, image: np.ndarray, size: int = MAP_SIZE) -> np.ndarray:
    """Demoire residual alone: mean absolute residual, area-pooled and rescaled to [0, 1]"""
    x = _to_tensor([_check_image(image)])
    net.eval()
    residual = net.forward_residual(x).abs().mean(dim=1, keepdim=True)
    pooled = F.adaptive_avg_pool2d(residual, size)[0, 0].cpu().numpy()
    lo, hi = float(pooled.min()), float(pooled.max())
    if hi - lo < 1e-12:
        return np.zeros((size, size), dtype=np.float32)
    return ((pooled - lo) / (hi - lo)).astype(np.float32)


def save_moire_net(path: str, net: MoireNet, history: Sequence[float] = ()) -> str:
    return save_checkpoint(path, 'moire', net, config=asdict(net.config), extra={'history': list(history)})


def load_moire_net(path: str) -> MoireNet:
    """Rebuild a trained estimator from its checkpoint (backbone frozen, eval mode)"""
    payload = load_checkpoint(path, kind='moire')
    net = build_moire_net(MoireNetConfig(**payload['config']))
    restore_model(net, payload)
    net.freeze_backbone()
    net.eval()
    return net
