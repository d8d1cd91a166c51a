"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class CoevoError(Exception):
    """Base class for all engine errors."""


class EmptyMatrix(CoevoError):
    pass


class NonFiniteEntry(CoevoError):
    pass


class OutOfRangeEntry(CoevoError):
    pass


class DimensionMismatch(CoevoError):
    pass


class DuplicateId(CoevoError):
    pass


class ZeroRows(CoevoError):
    pass


class ParseError(CoevoError):
    pass


class MalformedLevel(CoevoError):
    pass


class OutOfBounds(CoevoError):
    pass


class GenerationError(CoevoError):
    """Level generation hit its retry cap without producing a feasible layout."""


class FamilyMismatch(CoevoError):
    pass


class LaunchFailure(CoevoError):
    """An external policy process could not be started."""


class GenerationExhausted(CoevoError):
    """A designer could not produce the requested number of valid candidates."""


class EmptyCandidates(CoevoError):
    pass


class IterationOutOfRange(CoevoError):
    pass


class ConfigError(CoevoError):
    pass


class RunAborted(CoevoError):
    pass


class MissingCheckpoint(CoevoError):
    pass
