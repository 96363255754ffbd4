"""Simulated timelines and their summaries."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Any, Optional, Union

import pandas as pd

from ..errors import ContractViolation
from .engine import Event

TRACE_COLUMNS = ["resource", "label", "layer", "start", "end", "iteration", "ready", "nbytes"]
TRANSFER_LABELS = frozenset({"offload", "upload", "swap_in", "swap_out"})


@dataclass(frozen=True)
class ScheduleTrace:
    """Events of one simulation plus its iteration timing.

    ``iter_time`` is the gap between the starts of the last two iterations (the first forward
    of each), which is the steady-state period; with one iteration it is the makespan.
    """

    policy: str
    iters: int
    events: tuple[Event, ...]
    transition: Optional[int] = None
    d: Optional[int] = None

    def __repr__(self) -> str:
        return (
            f"<ScheduleTrace policy={self.policy} iters={self.iters} "
            f"events={len(self.events)} iter_time={self.iter_time:.6g}>"
        )

    @property
    def resources(self) -> list[str]:
        return sorted({e.resource for e in self.events})

    @property
    def makespan(self) -> float:
        return max((e.end for e in self.events), default=0.0)

    @property
    def iteration_starts(self) -> list[float]:
        starts = [float("inf")] * self.iters
        for e in self.events:
            if e.label == "fwd" and e.layer == 0:
                starts[e.iteration] = min(starts[e.iteration], e.start)
        return starts

    @property
    def iter_time(self) -> float:
        if self.iters < 2:
            return self.makespan
        starts = self.iteration_starts
        return starts[-1] - starts[-2]

    def events_on(self, resource: str) -> list[Event]:
        return sorted((e for e in self.events if e.resource == resource), key=lambda e: e.start)

    def busy_time(self, resource: str, iteration: Optional[int] = None) -> float:
        """Busy seconds on one resource, for one iteration (default: the last one)."""
        if iteration is None:
            iteration = self.iters - 1
        return sum(
            e.duration for e in self.events if e.resource == resource and e.iteration == iteration
        )

    def traffic(self, iteration: Optional[int] = None) -> dict[str, float]:
        """Bytes moved per transfer resource in one iteration (default: the last one)."""
        if iteration is None:
            iteration = self.iters - 1
        moved: dict[str, float] = {}
        for e in self.events:
            if e.label in TRANSFER_LABELS and e.iteration == iteration:
                moved[e.resource] = moved.get(e.resource, 0.0) + e.nbytes
        return moved

    def check_exclusive(self) -> None:
        """Raise if two events overlap on one resource."""
        eps = 1e-12
        for resource in self.resources:
            last_end = float("-inf")
            for e in self.events_on(resource):
                if e.end < e.start:
                    raise ContractViolation(f"{resource}: {e.label} ends before it starts")
                if e.start < last_end - eps * max(1.0, abs(last_end)):
                    raise ContractViolation(
                        f"{resource}: {e.label} layer {e.layer} starts at {e.start!r} "
                        f"before the previous event ends at {last_end!r}"
                    )
                last_end = e.end

    def to_frame(self) -> pd.DataFrame:
        rows = [
            (e.resource, e.label, e.layer, e.start, e.end, e.iteration, e.ready, e.nbytes)
            for e in sorted(self.events, key=lambda e: (e.start, e.resource, e.layer))
        ]
        return pd.DataFrame(rows, columns=TRACE_COLUMNS)

    def summary(self) -> dict[str, Any]:
        span = self.iter_time
        busy = {r: self.busy_time(r) for r in self.resources}
        return {
            "policy": self.policy,
            "iters": self.iters,
            "iter_time": span,
            "makespan": self.makespan,
            "busy": busy,
            "utilization": {r: (b / span if span > 0 else 0.0) for r, b in busy.items()},
            "traffic_bytes": self.traffic(),
        }

    def save_csv(self, path: Union[str, Path]) -> None:
        """Write the events, then one ``#`` line holding the timing summary."""
        path = Path(path)
        self.to_frame().to_csv(path, index=False)
        with path.open("a", encoding="utf-8") as fp:
            fp.write(f"# iter_time={self.iter_time!r} makespan={self.makespan!r}\n")


def load_trace_frame(path: Union[str, Path]) -> pd.DataFrame:
    return pd.read_csv(path, comment="#", float_precision="round_trip")
