"""Exception and warning types shared across the package."""


class LatentAtlasError(Exception):
    """Base class for all errors raised by this package."""


class DimensionMismatch(LatentAtlasError):
    """Array shapes disagree with what an operation requires."""


class SingularSystem(LatentAtlasError):
    """A linear system is row-rank deficient and its target is unreachable."""


class TooFewPoints(LatentAtlasError):
    """Clustering was asked for more centroids than there are points."""


class IndexOutOfRange(LatentAtlasError, IndexError):
    """A centroid index is outside [0, k)."""


class LinearizationBreakdown(LatentAtlasError):
    """Weight increments grew too large for the first-order update hypothesis."""


class NonFiniteLoss(LatentAtlasError):
    """Training loss became NaN or infinite (learning rate too high)."""


class NoEligibleCentroid(LatentAtlasError):
    """Class-constrained assignment found no centroid carrying the sample's class."""


class ParseError(LatentAtlasError):
    """A data file is malformed. Carries the 1-based line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class InconsistentDim(LatentAtlasError):
    """Feature vectors in one dataset have differing dimensions."""


class EmptyGroup(LatentAtlasError):
    """A pairing group exists on one side of the combination but not the other."""


class SpecInvalid(LatentAtlasError):
    """A synthetic-data specification violates its own constraints."""


class DegenerateData(UserWarning):
    """Fewer distinct points than requested clusters."""


class DegenerateCovariance(UserWarning):
    """Fewer positive-variance directions than requested projection axes."""


class ModelNotTrained(UserWarning):
    """An operation that expects a trained model received all-zero weights."""
