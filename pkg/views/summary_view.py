# File: views/summary_view.py
"""Model summary view: per-stage output shapes and parameter counts"""

import pandas as pd


def format_model_summary(summary: pd.DataFrame, title: str = 'Model summary') -> str:
    """
    Render the DataFrame from megc_net.model_summary() as text

    Args:
        summary: DataFrame with columns module, output_shape, params
        title: Heading line

    Returns:
        Multi-line text ending with the parameter total
    """
    shown = summary.copy()
    shown['output_shape'] = shown['output_shape'].map(lambda s: ' x '.join(str(d) for d in s))
    shown['params'] = shown['params'].map(lambda n: f"{n:,}")
    lines = [title, '=' * len(title), shown.to_string(index=False), '',
             f"Total parameters: {int(summary['params'].sum()):,}"]
    return '\n'.join(lines)
