"""Exception hierarchy shared by every module of the engine."""

from __future__ import annotations


class TierStreamError(Exception):
    """Base class for all engine errors."""


class ZeroNormError(TierStreamError, ValueError):
    pass


class DimensionMismatchError(TierStreamError, ValueError):
    pass


class NoConvergenceError(TierStreamError, ArithmeticError):
    pass


class InsufficientPointsError(TierStreamError, ValueError):
    pass


class DuplicateIdError(TierStreamError, KeyError):
    pass


class UnknownIdError(TierStreamError, KeyError):
    pass


class EmptyIndexError(TierStreamError, LookupError):
    pass


class InsufficientTrainingDataError(TierStreamError, ValueError):
    pass


class NotTrainedError(TierStreamError, RuntimeError):
    pass


class IndexOutOfRangeError(TierStreamError, IndexError):
    pass


class EmptySampleError(TierStreamError, ValueError):
    pass


class InvalidDimensionError(TierStreamError, ValueError):
    pass


class ChecksumMismatchError(TierStreamError, IOError):
    """Stored bytes do not match their recorded checksum.

    ``part`` names the snapshot part (or file) that failed verification.
    """

    def __init__(self, message: str, part: str | None = None) -> None:
        super().__init__(message)
        self.part = part


class PartialWriteError(TierStreamError, IOError):
    pass


class VersionMismatchError(TierStreamError, IOError):
    pass


class MissingRawVectorError(TierStreamError, KeyError):
    pass


class EmptyRankingError(TierStreamError, ValueError):
    pass


class LengthMismatchError(TierStreamError, ValueError):
    pass


class EmptyInputError(TierStreamError, ValueError):
    pass


class InvalidRateError(TierStreamError, ValueError):
    pass


class NegativeDeltaError(TierStreamError, ValueError):
    pass


class ConfigError(TierStreamError, ValueError):
    pass


class UnknownInjectionError(TierStreamError, ValueError):
    pass
