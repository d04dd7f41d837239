"""Exception hierarchy shared across the package."""


class OTKEError(Exception):
    """Base class for all errors raised by :mod:`otke`."""


class DimensionMismatch(OTKEError, ValueError):
    """Array shapes are inconsistent with each other."""


class NonFiniteError(OTKEError, FloatingPointError):
    """A NaN or Inf appeared in a computation.

    Raised by standard-arithmetic Sinkhorn when ``epsilon`` is too small;
    switch to ``mode="log"`` in that case. Training sets
    ``last_finite_epoch`` to the last epoch that completed with finite
    parameters.
    """

    def __init__(self, message, last_finite_epoch=None):
        super().__init__(message)
        self.last_finite_epoch = last_finite_epoch


class TooLarge(OTKEError, ValueError):
    """Input exceeds a hard size guard (oracle enumeration, Gram size)."""


class InsufficientData(OTKEError, ValueError):
    """Not enough (distinct) points to fit the requested model."""


class EmptySet(OTKEError, ValueError):
    """A feature set has no elements."""


class EmptyDataset(OTKEError, ValueError):
    """A dataset has no samples."""


class UnknownToken(OTKEError, ValueError):
    """A sequence contains a token missing from the alphabet."""


class SequenceTooShort(OTKEError, ValueError):
    """A sequence is shorter than the k-mer size."""


class ParseError(OTKEError, ValueError):
    """Malformed input file. ``lineno`` is 1-based."""

    def __init__(self, message, lineno=None):
        if lineno is not None:
            message = f"line {lineno}: {message}"
        super().__init__(message)
        self.lineno = lineno


class InconsistentDimension(ParseError):
    """Feature width differs between records."""


class EmptySample(ParseError):
    """A record has an empty feature list."""
