# File: utils/error_rates.py
"""Threshold arithmetic behind FAR / FRR (higher score = more spoof-like)"""

import numpy as np
import pandas as pd
from typing import Sequence, Tuple


def as_scores(values: Sequence[float]) -> np.ndarray:
    return np.asarray(list(values), dtype=np.float64)


def error_rates_at(
    live_scores: Sequence[float],
    spoof_scores: Sequence[float],
    threshold: float
) -> Tuple[float, float]:
    """
    FAR and FRR at one threshold

    A score >= threshold is classified as spoof, so live samples at or
    above the threshold are false rejections and spoof samples below it
    are false acceptances.

    Args:
        live_scores: Scores of live samples
        spoof_scores: Scores of spoof samples
        threshold: Decision threshold

    Returns:
        (far, frr)

    Example:
        >>> error_rates_at([0.1, 0.2, 0.9], [0.8, 0.7, 0.3], 0.5)
        (0.333..., 0.333...)
    """
    live = as_scores(live_scores)
    spoof = as_scores(spoof_scores)
    frr = float(np.count_nonzero(live >= threshold)) / live.size
    far = float(np.count_nonzero(spoof < threshold)) / spoof.size
    return far, frr


def error_rate_intervals(
    live_scores: Sequence[float],
    spoof_scores: Sequence[float]
) -> pd.DataFrame:
    """
    Piecewise-constant FAR / FRR over threshold intervals

    With u_0 < ... < u_{m-1} the sorted unique scores, the error rates are
    constant for thresholds in (u_{i-1}, u_i]. Row i describes that
    interval; row 0 starts at u_0 - 1 and row m ends at u_{m-1} + 1 in
    place of the infinite bounds.

    Args:
        live_scores: Scores of live samples
        spoof_scores: Scores of spoof samples

    Returns:
        DataFrame with columns lower, upper, far, frr, gap, mean_error
    """
    live = np.sort(as_scores(live_scores))
    spoof = np.sort(as_scores(spoof_scores))
    unique = np.unique(np.concatenate([live, spoof]))

    lower = np.concatenate([[unique[0] - 1.0], unique])
    upper = np.concatenate([unique, [unique[-1] + 1.0]])

    # thresholds inside (lower, upper]: live > lower are rejected, spoof <= lower accepted
    live_rejected = live.size - np.searchsorted(live, unique, side='right')
    spoof_accepted = np.searchsorted(spoof, unique, side='right')
    frr = np.concatenate([[1.0], live_rejected / live.size])
    far = np.concatenate([[0.0], spoof_accepted / spoof.size])

    return pd.DataFrame({
        'lower': lower,
        'upper': upper,
        'far': far,
        'frr': frr,
        'gap': np.abs(far - frr),
        'mean_error': (far + frr) / 2.0,
    })


def error_rate_curve(
    live_scores: Sequence[float],
    spoof_scores: Sequence[float],
    points: int = 201
) -> pd.DataFrame:
    """FAR / FRR sampled on an even threshold grid spanning the scores (for plotting)"""
    live = as_scores(live_scores)
    spoof = as_scores(spoof_scores)
    all_scores = np.concatenate([live, spoof])
    grid = np.linspace(min(0.0, all_scores.min()), max(1.0, all_scores.max()), points)
    rates = [error_rates_at(live, spoof, t) for t in grid]
    return pd.DataFrame({
        'threshold': grid,
        'far': [r[0] for r in rates],
        'frr': [r[1] for r in rates],
    })
