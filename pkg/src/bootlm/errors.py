"""Exception hierarchy shared by all bootlm modules."""


class BootLMError(Exception):
    """Base class for every error raised by this package."""


class DataError(BootLMError):
    """Bad input data: malformed files, unknown sources, unusable corpora."""


class NumericError(BootLMError):
    """A numerical failure (non-finite values) during training or scoring."""


class UnknownSource(DataError, ValueError):
    pass


class CorpusTooSmall(DataError, ValueError):
    pass


class EmptyCandidates(DataError, ValueError):
    pass


class InvalidId(DataError, ValueError):
    pass


class InvalidP(BootLMError, ValueError):
    pass


class LengthMismatch(BootLMError, ValueError):
    pass


class ShapeMismatch(BootLMError, ValueError):
    pass


class MaskTokenInEncoder(BootLMError, ValueError):
    pass


class PositionOverlap(BootLMError, ValueError):
    pass


class EmptyInput(BootLMError, ValueError):
    pass


class StepOutOfRange(BootLMError, ValueError):
    pass


class TooFewRows(BootLMError, ValueError):
    pass


class TooLong(DataError, ValueError):
    pass


class EmptySentence(DataError, ValueError):
    pass


class EmptyPairSet(DataError, ValueError):
    pass


class InvalidGrid(BootLMError, ValueError):
    pass


class NonPositiveTemperature(BootLMError, ValueError):
    pass


class CheckpointFormatError(DataError):
    pass


class NonFinite(NumericError, ValueError):
    pass


class NonFiniteGradient(NumericError):
    pass


class NonFiniteLoss(NonFinite):
    pass
