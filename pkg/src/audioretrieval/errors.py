"""Exception types shared across the package.

``DataError`` marks problems with user-supplied data or artifacts (exit code 1
in the CLI); ``UsageError`` marks bad invocations (exit code 2).
"""


class DataError(Exception):
    """Base class for invalid input data or incompatible artifacts."""


class UsageError(Exception):
    """Bad command invocation (missing/contradictory arguments)."""


# corpus
class MalformedCsv(DataError):
    pass


class DuplicateClip(DataError):
    pass


class EmptyCaption(DataError):
    pass


class EmptySplit(DataError):
    pass


# dsp
class DecodeError(DataError):
    pass


# text
class InconsistentDim(DataError):
    pass


class EmptyTable(DataError):
    pass


# nnet
class ShapeMismatch(DataError):
    pass


class DegenerateBatch(DataError):
    pass


class CheckpointMismatch(DataError):
    pass


# train
class BatchTooSmall(DataError):
    pass


class DimMismatch(DataError):
    pass


# evaluation
class NoRelevant(DataError):
    pass


class TooFewQueries(DataError):
    pass


class MissingGroundTruth(DataError):
    pass


class UnknownClip(DataError):
    pass
