# File: views/report_view.py
"""Human-readable HTER tables and the HTML evaluation report"""

import os
from typing import Optional

import pandas as pd

from utils.plotting import create_error_rate_plot, create_history_plot, create_score_histogram

RATE_COLUMNS = ['far', 'frr', 'hter', 'dev_eer']


def format_report_table(table: pd.DataFrame) -> str:
    """
    Render report rows as a fixed-width text table

    Rates are shown as percentages with two decimals, thresholds with six.

    Args:
        table: DataFrame with EvalReport columns (plus ablation / params when present)

    Returns:
        Table text
    """
    shown = table.copy()
    for col in RATE_COLUMNS:
        if col in shown.columns:
            shown[col] = shown[col].map(lambda v: f"{100.0 * v:.2f}%")
    if 'threshold' in shown.columns:
        shown['threshold'] = shown['threshold'].map(lambda v: f"{v:.6f}")
    return shown.to_string(index=False)


def write_html_report(
    path: str,
    scores: pd.DataFrame,
    curve: pd.DataFrame,
    report,
    history: Optional[pd.DataFrame] = None,
) -> None:
    """
    Write a standalone HTML page with the score histogram, FAR/FRR curves
    and (when given) the smoothed training history
    """
    parts = [
        '<html><head><meta charset="utf-8"><title>Evaluation report</title></head><body>',
        '<h1>Evaluation report</h1>',
        f"<p>FAR {100 * report.far:.2f}% &middot; FRR {100 * report.frr:.2f}% &middot; "
        f"HTER {100 * report.hter:.2f}% at threshold {report.threshold:.6f} "
        f"({report.n_live} live, {report.n_spoof} spoof)</p>",
        '<h2>Score distribution</h2>',
        create_score_histogram(scores, report.threshold).to_html(full_html=False, include_plotlyjs='cdn'),
        '<h2>Error rates</h2>',
        create_error_rate_plot(curve, report.threshold).to_html(full_html=False, include_plotlyjs=False),
    ]
    if history is not None and not history.empty:
        parts += ['<h2>Training history</h2>',
                  create_history_plot(history).to_html(full_html=False, include_plotlyjs=False)]
    parts.append('</body></html>')
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write('\n'.join(parts))
