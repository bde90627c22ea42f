"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: usage errors -> 1, data errors -> 2,
numeric failures -> 3.
"""


class SeqcoderError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(SeqcoderError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(SeqcoderError):
    """A documented precondition was violated by the caller."""


class ConfigError(SeqcoderError):
    """Invalid configuration value."""


class DataError(SeqcoderError):
    """Malformed or inconsistent input data."""


class MaskError(SeqcoderError):
    """A softmax row is fully masked."""


class IndexRangeError(SeqcoderError):
    """An id falls outside the valid index range."""


class CheckpointError(SeqcoderError):
    """A checkpoint file is corrupt, wrong-version, or incompatible."""


class NumericError(SeqcoderError):
    """Non-finite values appeared where finite numbers are required."""
