from __future__ import annotations

import time
import traceback
from typing import Optional

from rich.table import Table

from .chat import no_colour_rich_markup


class StepLoop:
    """
    A class with some utilities for tracking the state of a training loop.

    Note iter_count increases at the start of an iteration.

    This does not log anything itself.
    """

    def __init__(self, friendly_name: str) -> None:
        self.friendly_name = friendly_name

        self.iter_count: int = 0
        self.currently_running: bool = False
        self.last_exc: str = "No exception has occurred yet."
        self.last_exc_raw: Optional[BaseException] = None

        self.last_start: Optional[float] = None
        self.last_duration: float = 0.0
        self.total_duration: float = 0.0

    def __repr__(self) -> str:
        return (
            f"<friendly_name={self.friendly_name} iter_count={self.iter_count} "
            f"currently_running={self.currently_running} "
            f"last_duration={self.last_duration:.6f}>"
        )

    @property
    def last_ms(self) -> float:
        """Wall-clock milliseconds of the last finished iteration."""
        return self.last_duration * 1000.0

    @property
    def mean_ms(self) -> float:
        if self.iter_count == 0:
            return 0.0
        return self.total_duration * 1000.0 / self.iter_count

    def iter_start(self) -> None:
        """Register an iteration as starting."""
        self.iter_count += 1
        self.currently_running = True
        self.last_start = time.perf_counter()

    def iter_finish(self) -> None:
        """Register an iteration as finished successfully."""
        self.currently_running = False
        if self.last_start is not None:
            self.last_duration = time.perf_counter() - self.last_start
            self.total_duration += self.last_duration

    def iter_error(self, error: BaseException) -> None:
        """Register an iteration's exception."""
        self.currently_running = False
        self.last_exc_raw = error
        self.last_exc = "".join(
            traceback.format_exception(type(error), error, error.__traceback__)
        )

    def debug_table(self) -> str:
        """Plain text table with information on this loop."""
        table = Table("Key", "Value", title=self.friendly_name)

        table.add_row("iter_count", str(self.iter_count))
        table.add_row("currently_running", str(self.currently_running))
        table.add_row("last_ms", f"{self.last_ms:.3f}")
        table.add_row("mean_ms", f"{self.mean_ms:.3f}")
        table.add_row("last_exc", self.last_exc.strip().splitlines()[-1])

        return no_colour_rich_markup(table)
