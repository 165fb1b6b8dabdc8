"""Exception hierarchy shared by every teleporter module."""

from __future__ import annotations


class TeleportError(Exception):
    """Base class for all teleporter failures."""


class InvalidArgumentError(TeleportError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(TeleportError, ValueError):
    """A configuration file or value is invalid."""


class EmptyObjectError(TeleportError, ValueError):
    """A mask that must mark an object has no set pixel."""


class InsufficientFramesError(TeleportError):
    """A clip does not contain the instance in at least two frames."""


class ManifestError(TeleportError):
    """A dataset directory does not follow the documented layout."""

    def __init__(self, message: str, path: object = None) -> None:
        super().__init__(message)
        self.path = path


class EmptyDatasetError(TeleportError):
    """A manifest with no entries was asked to produce batches."""


class NumericalDivergenceError(TeleportError):
    """The training loss became NaN or infinite."""

    def __init__(self, message: str, step: int | None = None) -> None:
        super().__init__(message)
        self.step = step


class StageError(TeleportError):
    """A pipeline stage failed; wraps the original error with the stage label."""

    def __init__(self, stage: str, cause: Exception) -> None:
        super().__init__(f"[{stage}] {cause}")
        self.stage = stage
        self.cause = cause
