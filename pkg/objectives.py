"""Auxiliary map losses, classification loss and the weighted overall objective"""
import logging
from dataclasses import dataclass, field
from typing import Dict, NamedTuple, Optional, Sequence, Union

import torch
import torch.nn.functional as F

from config import CUES, LOSS_KEYS, COUNT_KEYS, LABEL_INDEX, DEFAULT_MU, DEFAULT_LAMBDA

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LossWeights:
    """mu weights the classification term, lambda_ the sum of auxiliary terms"""
    mu: float = DEFAULT_MU
    lambda_: float = DEFAULT_LAMBDA

    def __post_init__(self):
        if self.mu < 0 or self.lambda_ < 0:
            raise ValueError(f"loss weights must be non-negative, got mu={self.mu}, lambda={self.lambda_}")


class MaskedLoss(NamedTuple):
    value: torch.Tensor     # scalar
    valid_count: int
    all_masked: bool


def map_mse_loss(
    pred: torch.Tensor,
    gt: torch.Tensor,
    validity: torch.Tensor,
    per_pixel_mean: bool = False,
    normalize_by_valid: bool = False,
) -> MaskedLoss:
    """
    Validity-masked squared error between predicted and ground-truth maps

    value = (1/N) * sum over valid samples of the pixel-sum squared error.
    Masked samples contribute zero to the value and to the gradient; N is
    the full batch size unless normalize_by_valid is set.

    Args:
        pred: N x H x W (or N x 1 x H x W) predicted maps
        gt: Ground-truth maps, same shape as pred
        validity: N booleans
        per_pixel_mean: Average over pixels instead of summing
        normalize_by_valid: Divide by the number of valid samples instead of N

    Returns:
        MaskedLoss(value, valid_count, all_masked)
    """
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {tuple(pred.shape)} does not match gt shape {tuple(gt.shape)}")
    if pred.dim() < 2 or pred.shape[0] < 1:
        raise ValueError(f"expected a non-empty batch of maps, got shape {tuple(pred.shape)}")
    n = pred.shape[0]
    validity = torch.as_tensor(validity, device=pred.device)
    if validity.shape != (n,):
        raise ValueError(f"validity must have shape ({n},), got {tuple(validity.shape)}")

    squared = (pred - gt).pow(2).flatten(1)
    per_sample = squared.mean(dim=1) if per_pixel_mean else squared.sum(dim=1)
    mask = validity.to(dtype=pred.dtype)
    valid_count = int(validity.to(torch.bool).sum().item())

    denominator = float(valid_count) if normalize_by_valid and valid_count > 0 else float(n)
    value = (per_sample * mask).sum() / denominator
    return MaskedLoss(value=value, valid_count=valid_count, all_masked=valid_count == 0)


def labels_to_tensor(labels: Sequence[str], device: Optional[torch.device] = None) -> torch.Tensor:
    """Map 'live'/'spoof' labels to class indices 0/1"""
    try:
        return torch.tensor([LABEL_INDEX[label] for label in labels], dtype=torch.long, device=device)
    except KeyError as e:
        raise ValueError(f"unknown label {e.args[0]!r}") from e


def classification_loss(logits: torch.Tensor, labels: Union[torch.Tensor, Sequence[str]]) -> torch.Tensor:
    """Mean softmax cross-entropy; live is class 0, spoof class 1"""
    if not isinstance(labels, torch.Tensor):
        labels = labels_to_tensor(labels, logits.device)
    if logits.dim() != 2 or logits.shape[1] != 2:
        raise ValueError(f"logits must be N x 2, got {tuple(logits.shape)}")
    if labels.shape != (logits.shape[0],) or logits.shape[0] == 0:
        raise ValueError(f"labels shape {tuple(labels.shape)} does not match logits {tuple(logits.shape)}")
    return F.cross_entropy(logits, labels)


@dataclass
class LossBreakdown:
    """Per-component losses of one batch; absent cues are None"""
    l_cls: float
    l_overall: float
    l_d: Optional[float] = None
    l_r: Optional[float] = None
    l_m: Optional[float] = None
    l_b: Optional[float] = None
    n_d: Optional[int] = None
    n_r: Optional[int] = None
    n_m: Optional[int] = None
    n_b: Optional[int] = None
    total: Optional[torch.Tensor] = field(default=None, repr=False, compare=False)

    def to_record(self) -> Dict[str, float]:
        """Serializable dict without absent cue keys"""
        keys = ['l_overall', 'l_cls'] + [LOSS_KEYS[c] for c in CUES] + [COUNT_KEYS[c] for c in CUES]
        return {k: getattr(self, k) for k in keys if getattr(self, k) is not None}


def overall_loss(
    l_cls: torch.Tensor,
    aux: Dict[str, MaskedLoss],
    weights: LossWeights,
) -> LossBreakdown:
    """
    Combine the classification loss and the auxiliary losses

    l_overall = mu * l_cls + lambda * (l_d + l_r + l_b + l_m), with absent
    cues contributing nothing.

    Args:
        l_cls: Classification loss tensor
        aux: Masked auxiliary losses keyed by cue name
        weights: LossWeights

    Returns:
        LossBreakdown with python floats plus the differentiable total
    """
    if weights.mu < 0 or weights.lambda_ < 0:
        raise ValueError(f"loss weights must be non-negative, got mu={weights.mu}, lambda={weights.lambda_}")
    unknown = set(aux) - set(CUES)
    if unknown:
        raise ValueError(f"unknown cue losses: {sorted(unknown)}")

    values = {cue: float(loss.value.detach()) for cue, loss in aux.items()}
    for name, v in [('cls', float(l_cls.detach()))] + list(values.items()):
        if v < 0:
            raise ValueError(f"negative {name} loss {v}")

    aux_sum = 0.0
    for cue in ('depth', 'reflection', 'boundary', 'moire'):
        aux_sum = aux_sum + values.get(cue, 0.0)
    cls_value = float(l_cls.detach())

    total = weights.mu * l_cls
    if aux:
        total = total + weights.lambda_ * torch.stack([aux[c].value for c in CUES if c in aux]).sum()

    breakdown = LossBreakdown(
        l_cls=cls_value,
        l_overall=weights.mu * cls_value + weights.lambda_ * aux_sum,
        total=total,
    )
    for cue, loss in aux.items():
        setattr(breakdown, LOSS_KEYS[cue], values[cue])
        setattr(breakdown, COUNT_KEYS[cue], loss.valid_count)
    return breakdown
