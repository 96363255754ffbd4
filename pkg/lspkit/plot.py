"""HTML figures for training histories and fits."""

from pathlib import Path
from typing import TYPE_CHECKING, Mapping, Union

import pandas as pd
from plotly import express as px

from .consts import PLOT_DIV_ID

if TYPE_CHECKING:
    from plotly.graph_objs._figure import Figure
else:
    from plotly.graph_objs import Figure
# plotly builds its graph objects dynamically, so mypy only sees the private module

LOSS_FRIENDLY_NAMES = {
    "train_loss": "Training loss",
    "eval_loss": "Evaluation loss",
    "bias": "Relative bias",
}


def style(fig: Figure) -> Figure:
    fig.update_layout(
        title_x=0.5,
        font_size=14,
        legend={
            "orientation": "h",
            "yanchor": "bottom",
            "y": 1.02,
            "xanchor": "right",
            "x": 1,
        },
    )
    return fig


def write_html(fig: Figure, path: Union[str, Path]) -> None:
    """Write a standalone page. The div id is fixed so the same figure gives the same file."""
    Path(path).write_text(
        fig.to_html(include_plotlyjs="cdn", div_id=PLOT_DIV_ID, full_html=True),
        encoding="utf-8",
    )


def loss_curves(histories: Mapping[str, pd.DataFrame], column: str = "train_loss") -> Figure:
    """One line per method of ``column`` against step."""
    frames = []
    for method, df in histories.items():
        part = df[["step", column]].dropna()
        frames.append(part.assign(method=method))
    data = pd.concat(frames, ignore_index=True)
    fig: Figure = px.line(
        data,
        x="step",
        y=column,
        color="method",
        template="plotly_dark",
        labels={
            "step": "Step",
            column: LOSS_FRIENDLY_NAMES.get(column, column),
            "method": "Method",
        },
    )
    return style(fig)


def history_plot(df: pd.DataFrame) -> Figure:
    """Training and evaluation loss of one run."""
    long = df.melt(id_vars="step", value_vars=["train_loss", "eval_loss"]).dropna()
    fig: Figure = px.line(
        long,
        x="step",
        y="value",
        color="variable",
        template="plotly_dark",
        labels={"step": "Step", "value": "Loss", "variable": "Metric"},
    )
    for trace in fig.data:
        trace.name = LOSS_FRIENDLY_NAMES[trace.name]  # type:ignore
    return style(fig)


def fit_curve(df: pd.DataFrame, layer: int) -> Figure:
    """Loss and relative bias of one projector fit, per iteration."""
    long = df.melt(id_vars="step", value_vars=["loss", "relative_bias"])
    fig: Figure = px.line(
        long,
        x="step",
        y="value",
        color="variable",
        log_y=True,
        template="plotly_dark",
        title=f"Projector fit, layer {layer}",
        labels={"step": "Iteration", "value": "Value", "variable": "Metric"},
    )
    return style(fig)


def bias_plot(df: pd.DataFrame) -> Figure:
    """Median held-out bias against ``d``, one line per method and ``r``."""
    lines = df.dropna(subset=["d"])
    median = lines.groupby(["method", "r", "d"], as_index=False)["heldout_bias"].median()
    median["series"] = median["method"] + " r=" + median["r"].astype(str)
    fig: Figure = px.line(
        median,
        x="d",
        y="heldout_bias",
        color="series",
        markers=True,
        template="plotly_dark",
        labels={"d": "Subspace size d", "heldout_bias": "Held-out relative bias"},
    )
    return style(fig)
