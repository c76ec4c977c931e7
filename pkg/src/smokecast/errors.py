"""Exception hierarchy.

Every error raised deliberately by the package derives from ``SmokecastError``
so callers (and the CLI) can separate domain failures from programming bugs.
"""


class SmokecastError(Exception):
    """Base class for all package errors."""


class DataError(SmokecastError):
    """Input data violates a structural or value invariant."""

    def __init__(self, message, row=None, key=None):
        super().__init__(message)
        self.row = row
        self.key = key

    def to_record(self):
        return {
            "error": type(self).__name__,
            "message": str(self),
            "row": self.row,
            "key": None if self.key is None else [str(k) for k in self.key],
        }


class MissingAgeGroup(DataError):
    pass


class NegativeRate(DataError):
    pass


class DuplicateKey(DataError):
    pass


class ParseError(DataError):
    pass


class UnknownSex(DataError):
    pass


class OutOfRangeFraction(DataError):
    pass


class MissingCoreGroup(DataError):
    pass


class EmptySlice(DataError):
    pass


class ImplausibleE0(DataError):
    pass


class LifeTableError(SmokecastError):
    pass


class OpenGroupZeroRate(LifeTableError, DataError):
    pass


class NonFiniteRate(LifeTableError, DataError):
    pass


class ShapeMismatch(SmokecastError):
    pass


class AttributionAtUnity(SmokecastError):
    pass


class ZeroTotalMortality(SmokecastError):
    pass


class EmptySupport(SmokecastError):
    pass


class NonFiniteTarget(SmokecastError):
    pass


class ChainTooShort(SmokecastError):
    def __init__(self, message, minimum):
        super().__init__(message)
        self.minimum = minimum


class SamplingError(SmokecastError):
    """A block update failed; carries the iteration index."""

    def __init__(self, message, iteration=None, block=None):
        super().__init__(message)
        self.iteration = iteration
        self.block = block


class NonFiniteLik(SmokecastError):
    pass


class InitializationFailure(SmokecastError):
    pass


class CountExceedsDraws(SmokecastError):
    pass


class InsufficientSpread(SmokecastError):
    pass


class RankDeficient(SmokecastError):
    pass


class BracketFailure(SmokecastError):
    pass


class CollinearDesign(SmokecastError):
    def __init__(self, message, condition_number=None):
        super().__init__(message)
        self.condition_number = condition_number


class MissingAnchor(SmokecastError):
    pass


class TooFewDraws(SmokecastError):
    pass


class TestDataMissing(SmokecastError):
    __test__ = False  # keep pytest from collecting this as a test class


class InvalidTruth(SmokecastError):
    pass


class StageError(SmokecastError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause
