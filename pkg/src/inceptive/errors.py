"""Exception taxonomy shared across the library.

The CLI maps these onto exit codes: configuration problems exit 2, data
problems exit 3, numeric failures exit 4.
"""


class InceptiveError(Exception):
    """Base class for all library errors."""


class ConfigError(InceptiveError):
    """Invalid configuration: bad value, unknown key, inconsistent dims."""


class DataError(InceptiveError):
    """Base class for problems with inputs, files, and labels."""


class DimensionError(DataError):
    """Tensor extents do not satisfy an operation's contract."""


class VocabularyError(DataError):
    """Token id outside the configured vocabulary."""


class FormatError(DataError):
    """Malformed binary or text file; message carries the byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class LabelError(DataError):
    """Label outside the configured class range or of the wrong kind."""


class InputError(DataError):
    """Empty, mismatched, or otherwise unusable input data."""


class DegenerateBatchError(DataError):
    """Batch too small for the requested statistic (batch norm needs >= 2)."""


class UndefinedMetricError(DataError):
    """Metric has no defined value on this input (e.g. single-class AUC)."""


class DegenerateSampleError(DataError):
    """Statistical test sample carries no usable information."""


class NumericError(InceptiveError):
    """Non-finite value where the contract requires finite arithmetic."""
