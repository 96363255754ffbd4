from __future__ import annotations

from io import StringIO
from typing import Any, Sequence, Union

from rich.console import Console
from rich.table import Table
from tabulate import tabulate

from ..errors import ContractViolation


def no_colour_rich_markup(*objects: Any, width: int = 100) -> str:
    """Render rich objects to a plain string, with no colours (/ANSI) in the output."""
    temp_console = Console(  # Prevent messing with STDOUT's console
        color_system=None,
        file=StringIO(),
        force_terminal=False,
        width=width,
    )
    temp_console.print(*objects)
    return temp_console.file.getvalue()  # type: ignore


BYTE_UNITS = ("B", "KB", "MB", "GB", "TB")


def humanize_bytes(nbytes: Union[int, float], ndigits: int = 1) -> str:
    """Bytes in the largest decimal unit (1 KB = 1000 B) that keeps the value at or above one.

    Link traffic per iteration runs from kilobytes for compressed payloads to tens of
    gigabytes for swapped optimizer state. Counts under a kilobyte print as whole bytes.
    """
    if nbytes < 0:
        raise ContractViolation(f"byte count must be >= 0, got {nbytes}")
    value = float(nbytes)
    for unit in BYTE_UNITS[:-1]:
        if value < 1000:
            break
        value /= 1000
    else:
        unit = BYTE_UNITS[-1]
    if unit == "B":
        return f"{int(round(value)):,} B"
    return f"{value:,.{ndigits}f} {unit}"


def humanize_seconds(seconds: float) -> str:
    """Seconds as s or ms, whichever reads better."""
    if seconds >= 1.0:
        return f"{seconds:.3f} s"
    return f"{seconds * 1000:.3f} ms"


def key_value_table(title: str, data: dict[str, str]) -> str:
    """A two column rich table, rendered to plain text."""
    table = Table("Key", "Value", title=title)
    for key, value in data.items():
        table.add_row(key, value)
    return no_colour_rich_markup(table)


def plain_table(rows: Sequence[Sequence[Any]], headers: Sequence[str]) -> str:
    """Plain whitespace-aligned table, like the ones printed after a sweep."""
    return tabulate(rows, headers=headers, tablefmt="plain", floatfmt=".6g")
