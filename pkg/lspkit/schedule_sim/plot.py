"""Gantt chart of a simulated trace."""

from typing import TYPE_CHECKING

from plotly import graph_objects as go

from ..plot import style
from .trace import ScheduleTrace

if TYPE_CHECKING:
    from plotly.graph_objs._figure import Figure
else:
    from plotly.graph_objs import Figure

LABEL_COLOURS = {
    "fwd": "#3ba55d",
    "bwd": "#5865f2",
    "apply": "#faa81a",
    "upd": "#ed4245",
    "offload": "#9b59b6",
    "upload": "#1abc9c",
    "swap_in": "#1abc9c",
    "swap_out": "#9b59b6",
}
RESOURCE_ORDER = ["gpu", "cpu", "d2h", "h2d", "link"]


def plot_trace(trace: ScheduleTrace) -> Figure:
    """One row per resource, one bar per event, coloured by task kind."""
    fig = go.Figure()
    df = trace.to_frame()
    for label, part in df.groupby("label", sort=True):
        fig.add_trace(
            go.Bar(
                name=str(label),
                y=part["resource"],
                x=part["end"] - part["start"],
                base=part["start"],
                orientation="h",
                marker_color=LABEL_COLOURS.get(str(label), "#747f8d"),
                customdata=part[["layer", "iteration"]],
                hovertemplate="layer %{customdata[0]}, iteration %{customdata[1]}"
                "<br>%{base:.6g}s + %{x:.6g}s",
            )
        )
    present = [r for r in RESOURCE_ORDER if r in set(df["resource"])]
    fig.update_layout(
        template="plotly_dark",
        barmode="overlay",
        title=f"{trace.policy}: {trace.iter_time:.6g} s per iteration",
        xaxis_title="Seconds",
        yaxis={"categoryorder": "array", "categoryarray": present[::-1]},
    )
    return style(fig)
