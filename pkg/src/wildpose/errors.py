"""Exception types raised across the toolkit.

Validation problems derive from ``ValidationError`` (CLI exit status 1),
file problems from ``IoError`` (CLI exit status 2).
"""


class ValidationError(ValueError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NotScalar(ValidationError):
    pass


class NonFinite(ValidationError):
    pass


class NonUnitDirection(ValidationError):
    pass


class DegenerateFit(ValidationError):
    pass


class DegeneratePose(ValidationError):
    pass


class InvalidConfig(ValidationError):
    pass


class ConfigMismatch(ValidationError):
    pass


class MissingAnnotation(ValidationError):
    pass


class StageMismatch(ValidationError):
    pass


class EmptyDataset(ValidationError):
    pass


class CameraSamplingExhausted(RuntimeError):
    pass


class IoError(OSError):
    pass


class FormatError(IoError):
    pass


class ChecksumError(FormatError):
    pass
