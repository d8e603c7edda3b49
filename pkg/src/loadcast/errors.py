"""Exception types shared across the package.

The CLI maps these onto exit codes: usage problems exit 1, data and
validation problems exit 2, numeric failures exit 3.
"""


class LoadcastError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(LoadcastError):
    """Operand shapes are inconsistent (matrix products, parameter loads)."""


class DataError(LoadcastError):
    """Input data is malformed or violates a validation rule."""


class CheckpointError(LoadcastError):
    """A checkpoint file is unreadable, corrupt, or incompatible."""


class NumericError(LoadcastError):
    """A computation produced or encountered a non-finite value."""
