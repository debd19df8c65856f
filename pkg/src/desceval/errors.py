"""Typed error hierarchy shared across the toolkit.

The CLI maps exceptions to exit codes through the ``exit_code`` attribute:
2 for configuration problems, 3 for data/format problems, 4 for metrics
that are undefined on the given inputs.
"""


class DescevalError(Exception):
    """Base class for all toolkit errors."""

    exit_code = 3


class ConfigError(DescevalError):
    """A configuration value violates its invariant (tau, k, fractions, ...)."""

    exit_code = 2


class DataError(DescevalError):
    """Malformed or mutually inconsistent input data."""

    exit_code = 3


class BadMagicError(DataError):
    """File does not start with the expected magic bytes."""


class TruncatedFileError(DataError):
    """File is shorter than its header promises."""


class UnsupportedDtypeError(DataError):
    """Embedding file declares a dtype code this reader does not support."""


class MatrixSizeError(DataError):
    """Header row/column counts are zero or overflow addressable sizes."""


class ShapeMismatchError(DataError):
    """Two inputs that must agree in shape do not."""


class ZeroNormRowError(DataError):
    """A row with (near-)zero Euclidean norm cannot be normalized."""


class DescriptorFormatError(DataError):
    """Descriptor JSON violates the class -> descriptor-list schema."""


class MetricUndefinedError(DescevalError):
    """The requested statistic is undefined on these inputs (e.g. no matches)."""

    exit_code = 4
