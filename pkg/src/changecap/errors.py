"""Exception hierarchy shared by every module."""


class ChangeCapError(Exception):
    """Base class for all package errors."""


class DimensionError(ChangeCapError, ValueError):
    """Operand shapes do not conform."""


class ConfigError(ChangeCapError, ValueError):
    """Invalid model or training configuration."""


class ContractError(ChangeCapError, RuntimeError):
    """An API precondition was violated (e.g. backward on a non-scalar)."""


class DeterminismError(ChangeCapError, RuntimeError):
    """Two evaluations of a supposedly pure function disagreed."""


class NumericError(ChangeCapError, FloatingPointError):
    """A NaN or Inf showed up where finite values were required."""


class DataError(ChangeCapError, ValueError):
    """Malformed data on disk or in a manifest."""


class VocabError(DataError):
    """Token id outside the vocabulary, or an unusable corpus."""


class CaptionLengthError(DataError):
    """Caption does not fit in the fixed sequence length."""


class FeatureFileError(DataError):
    """Base for feature-file parse failures."""


class BadMagicError(FeatureFileError):
    pass


class TruncatedPayloadError(FeatureFileError):
    pass


class PayloadMismatchError(FeatureFileError):
    pass
