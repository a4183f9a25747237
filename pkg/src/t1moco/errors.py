"""Exception hierarchy shared across the package.

Every error raised by the library derives from :class:`T1MocoError`, so
callers can catch one base class. The CLI maps subtrees of this hierarchy
to exit-code categories (see :mod:`t1moco.cli`).
"""


class T1MocoError(Exception):
    """Base class for all t1moco errors."""


class ValidationError(T1MocoError):
    """A container invariant was violated."""


class TooFewFramesError(ValidationError):
    """Fewer than 3 frames; a 2-parameter fit needs a residual degree of freedom."""


class ShapeMismatchError(ValidationError):
    """Arrays that must be co-located do not share the same shape."""


class NonIncreasingTimestampsError(ValidationError):
    """Inversion times are not strictly increasing and positive."""


class NonFiniteValueError(ValidationError):
    """NaN or infinity found where finite values are required."""


class ConstantSeriesError(ValidationError):
    """Series has zero intensity range; min-max normalization is undefined."""


class NonPositiveT1Error(ValidationError):
    """T1 must be strictly positive."""


class ConstantObservedError(ValidationError):
    """R^2 is undefined when the observed samples are all equal."""


class EmptyMaskError(ValidationError):
    """Hausdorff distance needs at least one foreground voxel per mask."""


class NotNormalizedError(ValidationError):
    """Series intensities fall outside the normalized range expected by the joint fit."""


class InvalidConfigError(T1MocoError):
    """A configuration value is out of its allowed range."""


class FileFormatError(T1MocoError):
    """Base class for on-disk format problems."""


class ParseError(FileFormatError):
    """A manifest or config file could not be parsed."""


class MissingFrameError(FileFormatError):
    """A manifest references a frame file that does not exist."""


class SizeMismatchError(FileFormatError):
    """A raw data file does not contain the expected number of bytes."""


class ChecksumError(FileFormatError):
    """A stored checksum does not match the file contents."""
