"""Exception hierarchy shared by every stage of the pipeline."""


class VmdNetError(Exception):
    """Base class for all errors raised by vmdnet."""


class ConfigError(VmdNetError, ValueError):
    """Invalid configuration value; the message names the offending key."""


class DataError(VmdNetError, ValueError):
    """Input data could not be used."""


class NumericalError(VmdNetError, ArithmeticError):
    """A computation produced non-finite values or could not proceed."""


class NonFiniteInput(DataError):
    pass


class SignalTooShort(DataError):
    pass


class SeriesTooShort(DataError):
    pass


class DegenerateSplit(DataError):
    pass


class NonFiniteNormalization(DataError):
    pass


class MissingColumn(DataError):
    pass


class NonMonotonicTimestamps(DataError):
    pass


class EmptyFile(DataError):
    pass


class TooShort(DataError):
    pass


class KTooSmall(ConfigError):
    pass


class ShapeMismatch(VmdNetError, ValueError):
    pass


class NonFiniteLoss(NumericalError):
    pass


class EmptyCandidateSet(NumericalError):
    pass


class WindowDecompositionError(VmdNetError):
    """A single window failed to decompose; carries the window index."""

    def __init__(self, index, cause):
        super().__init__(f"window {index}: {cause}")
        self.index = index
        self.cause = cause
