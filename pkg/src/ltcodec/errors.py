"""Exception hierarchy shared by all ltcodec modules."""


class CodecError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(CodecError):
    """Tensor extents are inconsistent with the requested operation."""


class NumericError(CodecError):
    """An operation produced non-finite values from finite input."""


class DomainError(CodecError):
    """A parameter is outside its mathematical domain (e.g. scale <= 0)."""


class ConstraintError(CodecError):
    """A normalization parameter violates its positivity constraint."""


class UsageError(CodecError):
    """The API was called in an unsupported way."""


class FormatError(CodecError):
    """A serialized container (model file, image file, header) is malformed."""


class StreamError(CodecError):
    """An arithmetic-coded payload is invalid, truncated, or out of range."""


class DegenerateFitError(CodecError):
    """A distribution fit collapsed (constant samples, zero scale)."""
