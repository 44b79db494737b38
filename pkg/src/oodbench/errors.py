"""Exception hierarchy for the toolkit."""


class OodbenchError(Exception):
    """Base class for all toolkit errors."""


class FormatError(OodbenchError):
    """File is not a valid NIfTI-1 single-file volume."""


class UnsupportedDatatypeError(FormatError):
    """NIfTI datatype code outside the supported set (uint8, int16, float32)."""


class ShapeError(OodbenchError):
    """Array shapes are inconsistent with each other or with the declared geometry."""


class InvalidProbabilityError(OodbenchError):
    """Probability volume violates range or per-voxel sum constraints."""


class ParameterError(OodbenchError):
    """A severity or configuration parameter is outside its valid range."""


class EmptyMaskError(OodbenchError):
    """A mask was supplied but selects no voxels."""


class DimensionMismatchError(OodbenchError):
    """Feature-vector dimensions disagree."""


class InsufficientDataError(OodbenchError):
    """Not enough samples to compute the requested statistic."""


class DataError(OodbenchError):
    """Input data contains non-finite or otherwise unusable values."""


class UsageError(OodbenchError):
    """Inputs supplied do not match the requested scoring method."""


class ConfigurationError(OodbenchError):
    """Manifest or config file is missing, malformed, or internally inconsistent."""
