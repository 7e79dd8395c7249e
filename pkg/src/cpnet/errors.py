"""Exception hierarchy. Each family carries the CLI exit code it maps to."""


class CpnError(Exception):
    exit_code = 1


class ConfigError(CpnError, ValueError):
    exit_code = 2


class IoError(CpnError, OSError):
    exit_code = 3


class DataError(CpnError, ValueError):
    """Input data violates a documented invariant."""

    exit_code = 4


class MissingArtifact(CpnError, FileNotFoundError):
    exit_code = 5


# numeric / shape errors
class NearZeroNorm(DataError):
    pass


class DimMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


class EmptySupport(DataError):
    pass


class ZeroAttributeVector(DataError):
    pass


# file formats
class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class CountMismatch(DataError):
    pass


class RaggedRows(DataError):
    pass


class NegativeScore(DataError):
    pass


class AllZeroClassVector(DataError):
    pass


class NonFiniteValue(DataError):
    pass


# splits / bundle
class OverlappingSplits(DataError):
    pass


class EmptySplit(DataError):
    pass


class MissingAttributeVector(DataError):
    pass


class UnsplitClass(DataError):
    pass


class EmptyClass(DataError):
    pass


# sampling
class PoolTooSmall(DataError):
    pass


class ClassTooSmall(DataError):
    pass


class RejectionBudgetExceeded(ConfigError):
    pass


class MissingCheckpoint(MissingArtifact):
    pass
