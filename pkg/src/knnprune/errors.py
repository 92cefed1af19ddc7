"""Exception hierarchy shared by every module."""

from __future__ import annotations


class KnnPruneError(Exception):
    """Base class for all errors raised by this package."""


class InvalidArgument(KnnPruneError, ValueError):
    """A caller-supplied value violates a precondition."""


class StateError(KnnPruneError, RuntimeError):
    """An operation is not allowed in the object's current state."""


class InsufficientData(KnnPruneError):
    """Too few entries to compute the requested quantity."""


class EmptyDatastore(InsufficientData):
    """The datastore has no entries."""


class FormatError(KnnPruneError):
    """A file does not match the expected binary layout.

    ``offset`` is the byte position at which the problem was detected,
    or ``None`` when it is not tied to one position.
    """

    def __init__(self, message: str, offset: int | None = None) -> None:
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
