# File: utils/plotting.py
"""Plotting utilities for evaluation reports and training history"""

import plotly.graph_objs as go
from typing import Dict, List, Optional
import pandas as pd
from config import AXIS_TITLES, CLASS_COLORS, LOSS_COLORS, HISTORY_SMOOTHING_WINDOW, LIVE, SPOOF

# Fallback color palette for series not in the config
FALLBACK_COLORS = [
    '#1f77b4', '#ff7f0e', '#2ca02c', '#d62728', '#9467bd',
    '#8c564b', '#e377c2', '#7f7f7f', '#bcbd22', '#17becf',
]


def get_axis_title(key: str) -> str:
    """Get axis title for a quantity"""
    return AXIS_TITLES.get(key, key.replace('_', ' ').title())


def get_series_color(name: str, color_map: Dict, used_colors: set = None) -> str:
    """
    Get color for a series with fallback to palette if not in map

    Args:
        name: Series name
        color_map: Dictionary mapping series names to colors
        used_colors: Set of colors already used (to avoid duplicates)

    Returns:
        Color string (hex code)
    """
    if used_colors is None:
        used_colors = set()
    if name in color_map:
        return color_map[name]
    for color in FALLBACK_COLORS:
        if color not in used_colors:
            used_colors.add(color)
            return color
    return FALLBACK_COLORS[len(used_colors) % len(FALLBACK_COLORS)]


def create_score_histogram(scores: pd.DataFrame, threshold: Optional[float] = None) -> go.Figure:
    """
    Overlaid histograms of live and spoof scores

    Args:
        scores: DataFrame with columns 'label' and 'score'
        threshold: Operating threshold drawn as a vertical line

    Returns:
        Plotly Figure object
    """
    fig = go.Figure()
    for label in (LIVE, SPOOF):
        subset = scores[scores['label'] == label]
        if subset.empty:
            continue
        fig.add_trace(go.Histogram(
            x=subset['score'],
            name=f"{label} (n={len(subset)})",
            marker_color=CLASS_COLORS[label],
            opacity=0.6,
            xbins=dict(start=0.0, end=1.0, size=0.02),
        ))
    if threshold is not None:
        fig.add_vline(x=threshold, line_dash='dash', line_color='#333333',
                      annotation_text=f"t={threshold:.4f}", annotation_position='top')
    fig.update_layout(
        barmode='overlay',
        xaxis_title=get_axis_title('score'),
        yaxis_title='Count',
        template='plotly_white',
        legend=dict(orientation='h', yanchor='bottom', y=1.02, xanchor='right', x=1),
    )
    return fig


def create_error_rate_plot(curve: pd.DataFrame, threshold: Optional[float] = None) -> go.Figure:
    """
    FAR and FRR against the decision threshold

    Args:
        curve: DataFrame with columns threshold, far, frr
        threshold: Operating threshold drawn as a vertical line

    Returns:
        Plotly Figure object
    """
    fig = go.Figure()
    fig.add_trace(go.Scatter(x=curve['threshold'], y=curve['far'], mode='lines', name='FAR',
                             line=dict(color=CLASS_COLORS[SPOOF], width=2, shape='hv')))
    fig.add_trace(go.Scatter(x=curve['threshold'], y=curve['frr'], mode='lines', name='FRR',
                             line=dict(color=CLASS_COLORS[LIVE], width=2, shape='hv')))
    if threshold is not None:
        fig.add_vline(x=threshold, line_dash='dash', line_color='#333333')
    fig.update_layout(
        xaxis_title=get_axis_title('threshold'),
        yaxis_title=get_axis_title('rate'),
        yaxis=dict(range=[-0.02, 1.02]),
        template='plotly_white',
        hovermode='x unified',
    )
    return fig


def create_history_plot(
    history: pd.DataFrame,
    columns: Optional[List[str]] = None,
    window: int = HISTORY_SMOOTHING_WINDOW
) -> go.Figure:
    """
    Smoothed loss components per training step

    Args:
        history: DataFrame of history.jsonl records (needs a 'step' column)
        columns: Loss columns to draw (default: every l_* column present)
        window: Rolling mean window

    Returns:
        Plotly Figure object
    """
    if columns is None:
        columns = [c for c in LOSS_COLORS if c in history.columns]
    fig = go.Figure()
    used_colors = set()
    for col in columns:
        series = history[col].rolling(window, min_periods=1).mean()
        fig.add_trace(go.Scatter(
            x=history['step'], y=series, mode='lines', name=col,
            line=dict(color=get_series_color(col, LOSS_COLORS, used_colors), width=2),
        ))
    fig.update_layout(
        xaxis_title=get_axis_title('step'),
        yaxis_title=get_axis_title('loss'),
        yaxis_type='log',
        template='plotly_white',
        hovermode='x unified',
    )
    return fig
