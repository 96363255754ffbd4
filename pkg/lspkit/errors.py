from __future__ import annotations

from typing import TYPE_CHECKING, Optional

if TYPE_CHECKING:
    from .trainer import TrainHistory


class LSPKitError(Exception):
    """Base exception for everything raised on purpose by this package."""


class ContractViolation(LSPKitError):
    """A precondition was not met, for example mismatched matrix dimensions."""


class InvalidConfig(ContractViolation):
    """A configuration value is out of range. ``key`` is the dotted key path."""

    def __init__(self, key: str, message: str) -> None:
        self.key = key
        self.message = message
        super().__init__(f"{key}: {message}")

    def prefixed(self, prefix: str) -> InvalidConfig:
        """Same error, with the key nested under ``prefix``."""
        return InvalidConfig(f"{prefix}.{self.key}" if prefix else self.key, self.message)


class UnsupportedSize(LSPKitError):
    """The input is larger than the desk-scale guard allows."""


class DegenerateInput(LSPKitError):
    """The result is undefined for this input, for example the relative bias of zero."""


class NumericAbort(LSPKitError):
    """Non-finite values or divergence. May carry the history recorded so far."""

    def __init__(self, message: str, history: Optional[TrainHistory] = None) -> None:
        self.history = history
        super().__init__(message)


class MissingLog(LSPKitError):
    """Subspace update logs needed to rebuild the accumulated update are missing."""


class InfeasibleProfile(LSPKitError):
    """A timing profile can't be simulated, for example a zero bandwidth."""


class OutputExists(LSPKitError):
    """The output directory already exists and isn't empty."""
