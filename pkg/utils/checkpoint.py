"""Self-describing torch checkpoints shared by the moire estimator and the classifier"""
import os
import hashlib
import logging
from typing import Any, Dict, List, Optional

import torch
import torch.nn as nn

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class CheckpointMismatchError(RuntimeError):
    """Raised when checkpoint tensors do not fit the model being restored"""

    def __init__(self, mismatches: List[str]):
        self.mismatches = mismatches
        super().__init__("checkpoint incompatible with model: " + '; '.join(mismatches))


def layer_index(model: nn.Module) -> Dict[str, List[int]]:
    """Parameter/buffer name -> shape"""
    return {name: list(t.shape) for name, t in model.state_dict().items()}


def save_checkpoint(
    path: str,
    kind: str,
    model: nn.Module,
    optimizer: Optional[torch.optim.Optimizer] = None,
    scheduler: Optional[Any] = None,
    config: Optional[Dict[str, Any]] = None,
    extra: Optional[Dict[str, Any]] = None,
) -> str:
    """
    Write a checkpoint with a layer-name index next to the weights

    Args:
        path: Output file
        kind: 'megc' or 'moire'
        model: Module whose state_dict is stored
        optimizer: Optional optimizer state
        scheduler: Optional LR scheduler state
        config: Resolved config dictionary needed to rebuild the model
        extra: Anything else (step counters, history length)

    Returns:
        The written path
    """
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    payload = {
        'kind': kind,
        'format_version': FORMAT_VERSION,
        'layers': layer_index(model),
        'state_dict': model.state_dict(),
        'optimizer': optimizer.state_dict() if optimizer is not None else None,
        'scheduler': scheduler.state_dict() if scheduler is not None else None,
        'config': config or {},
        'extra': extra or {},
    }
    tmp_path = path + '.tmp'
    torch.save(payload, tmp_path)
    os.replace(tmp_path, path)
    logger.debug("Saved %s checkpoint to %s", kind, path)
    return path


def load_checkpoint(path: str, kind: Optional[str] = None) -> Dict[str, Any]:
    """Read a checkpoint written by save_checkpoint()"""
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    # local files written by save_checkpoint(); they carry optimizer state and plain dicts
    payload = torch.load(path, map_location='cpu', weights_only=False)
    if not isinstance(payload, dict) or 'state_dict' not in payload or 'layers' not in payload:
        raise CheckpointMismatchError([f"{path} is not a checkpoint written by this package"])
    if kind is not None and payload.get('kind') != kind:
        raise CheckpointMismatchError([f"expected a '{kind}' checkpoint, got '{payload.get('kind')}'"])
    return payload


def diff_layers(model: nn.Module, layers: Dict[str, List[int]]) -> List[str]:
    """Describe every layer whose name or shape differs between model and checkpoint"""
    expected = layer_index(model)
    problems = []
    for name in sorted(set(expected) | set(layers)):
        if name not in layers:
            problems.append(f"{name}: missing from checkpoint")
        elif name not in expected:
            problems.append(f"{name}: not in model")
        elif list(layers[name]) != expected[name]:
            problems.append(f"{name}: checkpoint {list(layers[name])} vs model {expected[name]}")
    return problems


def restore_model(model: nn.Module, payload: Dict[str, Any]) -> nn.Module:
    """Load weights after verifying every layer name and shape"""
    problems = diff_layers(model, payload['layers'])
    if problems:
        raise CheckpointMismatchError(problems)
    model.load_state_dict(payload['state_dict'])
    return model


def checkpoint_id(path: str) -> str:
    """sha256 of the checkpoint file"""
    digest = hashlib.sha256()
    with open(path, 'rb') as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()
