"""Exception hierarchy shared by all pipeline stages."""


class TunnelmagError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(TunnelmagError, ValueError):
    pass


# ingest
class MissingFile(TunnelmagError, FileNotFoundError):
    pass


class DimensionMismatch(ValidationError):
    pass


class NonMonotoneTimestamps(ValidationError):
    pass


class TooFewFrames(ValidationError):
    pass


class NonFiniteInput(ValidationError):
    pass


class ZeroFactor(ValidationError):
    pass


# pyramid
class TooManyScales(ValidationError):
    pass


class DegenerateDimensions(ValidationError):
    pass


class ProvenanceMismatch(ValidationError):
    pass


# magnify
class NonUniformSampling(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class EvenWindow(ValidationError):
    pass


# flow
class FrameTooSmallForLevels(ValidationError):
    pass


# analysis
class EmptySeries(ValidationError):
    pass


class PrismOutOfFrame(ValidationError):
    pass


class PrismUntracked(TunnelmagError):
    pass


class PointUntracked(TunnelmagError):
    pass


# synth / cli
class SpecInvalid(ValidationError):
    pass


class ConfigError(ValidationError):
    pass


class MissingIntermediate(TunnelmagError):
    pass


class UnknownStage(TunnelmagError):
    pass


class IoError(TunnelmagError, OSError):
    pass
