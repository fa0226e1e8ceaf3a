"""
CDF and Trace Analysis
Tabulates solver traces and reward CDFs, and draws the improvement and
CDF-comparison figures as standalone plotly HTML
"""
import logging
import os
from typing import Dict, Iterable, Optional

import numpy as np
import pandas as pd
import plotly.graph_objects as go

from .mdp_core import DiscreteDistribution

logger = logging.getLogger(__name__)

TRACE_COLUMNS = ["k", "lambda_k", "var_k", "inner_value", "inner_iters"]
EXPORT_TRACE_COLUMNS = ["k", "lambda_k", "inner_value", "millis"]
CDF_COLUMNS = ["lambda", "F"]

PALETTE = ['#EF5350', '#F48FB1', '#10b981', '#E57373', '#F8BBD0', '#64B5F6']


def trace_table(result) -> pd.DataFrame:
    """Deterministic trace columns of a steady or finite solve (timings excluded)."""
    frame = result.trace_frame().rename(columns={"inner_iterations": "inner_iters"})
    return frame[TRACE_COLUMNS]


def timing_table(result) -> pd.DataFrame:
    return pd.DataFrame({"k": [row.k for row in result.trace], "millis": [row.millis for row in result.trace]})


def cdf_table(cdf) -> pd.DataFrame:
    """(lambda, F) from a SteadyCdf or a DiscreteDistribution."""
    if isinstance(cdf, DiscreteDistribution):
        return pd.DataFrame({"lambda": cdf.values, "F": np.clip(np.cumsum(cdf.probs), 0.0, 1.0)})
    return cdf.to_frame()[CDF_COLUMNS]


def export_trace(trace: pd.DataFrame, timings: Optional[pd.DataFrame]) -> pd.DataFrame:
    """Merge wall times back into a stored trace for export."""
    if timings is None or timings.empty:
        merged = trace.assign(millis=np.nan)
    else:
        merged = trace.merge(timings, on="k", how="left")
    return merged[EXPORT_TRACE_COLUMNS]


def comparison_table(rows: Iterable[Dict]) -> pd.DataFrame:
    """Iterate-vs-baseline report with a disagreement flag and timing ratio."""
    frame = pd.DataFrame(list(rows), columns=["tag", "iterate_var", "baseline_var", "iterate_ms", "baseline_ms"])
    frame["agree"] = np.isclose(frame["iterate_var"], frame["baseline_var"], rtol=0.0, atol=1e-12)
    frame["speedup"] = frame["baseline_ms"] / frame["iterate_ms"].where(frame["iterate_ms"] > 0)
    return frame


def check_cdf(frame: pd.DataFrame, tol: float = 1e-9) -> bool:
    """Nondecreasing and ending at 1."""
    values = frame["F"].to_numpy()
    return bool(values.size and np.all(np.diff(values) >= -tol) and abs(values[-1] - 1.0) <= tol)

# =============================================================================
# FIGURES
# =============================================================================

def _layout(fig: go.Figure, xaxis_title: str, yaxis_title: str) -> go.Figure:
    fig.update_layout(
        template='plotly_dark',
        paper_bgcolor='rgba(229, 115, 115, 0.05)',
        plot_bgcolor='rgba(229, 115, 115, 0.05)',
        font=dict(color='#F48FB1'),
        showlegend=True,
        legend=dict(orientation="h", yanchor="bottom", y=1.02, xanchor="right", x=1),
        xaxis=dict(title=xaxis_title, showgrid=True, gridcolor='rgba(229, 115, 115, 0.2)'),
        yaxis=dict(title=yaxis_title, showgrid=True, gridcolor='rgba(229, 115, 115, 0.2)',
                   zeroline=True, zerolinecolor='rgba(255, 255, 255, 0.2)'),
        height=400,
        margin=dict(l=20, r=20, t=60, b=20),
    )
    return fig


def trace_figure(traces: Dict[str, pd.DataFrame]) -> go.Figure:
    """VaR of the incumbent policy per iteration, one line per run."""
    fig = go.Figure()
    for i, (label, trace) in enumerate(traces.items()):
        fig.add_trace(go.Scatter(
            x=trace["k"],
            y=trace["var_k"] if "var_k" in trace else trace["lambda_k"],
            name=label,
            mode='lines+markers',
            line=dict(color=PALETTE[i % len(PALETTE)], width=3),
            marker=dict(size=6),
            hovertemplate='<b>%{fullData.name}</b><br>k: %{x}<br>VaR: %{y:.4g}<extra></extra>',
        ))
    return _layout(fig, 'Iteration k', 'VaR')


def cdf_figure(initial: pd.DataFrame, final: pd.DataFrame, alpha: Optional[float] = None) -> go.Figure:
    """Step CDFs of the initial and the optimal policy."""
    fig = go.Figure()
    for i, (label, frame) in enumerate((("initial policy", initial), ("optimal policy", final))):
        fig.add_trace(go.Scatter(
            x=frame["lambda"],
            y=frame["F"],
            name=label,
            mode='lines',
            line=dict(shape='hv', color=PALETTE[i], width=3),
        ))
    if alpha is not None:
        fig.add_hline(
            y=alpha,
            line_dash="dash",
            line_color="rgba(255, 255, 255, 0.3)",
            annotation_text=f"alpha = {alpha:g}",
            annotation_position="right",
        )
    return _layout(fig, 'Reward level', 'P(R <= level)')


def write_figure(fig: go.Figure, path: str) -> None:
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    fig.write_html(path, include_plotlyjs="cdn")
    logger.info("wrote figure %s", path)
