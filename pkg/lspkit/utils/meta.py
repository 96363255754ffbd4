from __future__ import annotations

import logging

from red_commons.logging import RedTraceLogger
from red_commons.logging import getLogger as red_get_logger
from red_commons.logging import maybe_update_logger_class

# red_commons registers these two extra levels around the stdlib ones
TRACE = 5
VERBOSE = 15


def get_lsp_logger(name: str) -> RedTraceLogger:
    """Get a logger for the given name.

    Parameters
    ----------
    name : str
        The ``__name__`` of the file

    Returns
    -------
    RedTraceLogger
        The logger, with ``trace`` and ``verbose`` levels available
    """
    split = name.split(".")
    if split[0] == "lspkit":
        split = split[1:]
    if len(split) == 2 and split[0] == split[1]:  # for example `cli.cli` becomes `cli`
        split = split[:1]

    maybe_update_logger_class()
    return red_get_logger(".".join(["lspkit", *split]))


def verbosity_to_level(verbosity: int) -> int:
    """Map a count of ``-v`` flags to a logging level."""
    if verbosity <= 0:
        return logging.INFO
    if verbosity == 1:
        return VERBOSE
    if verbosity == 2:
        return logging.DEBUG
    return TRACE
