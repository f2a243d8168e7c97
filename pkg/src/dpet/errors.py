"""Exception hierarchy for the toolkit.

ValidationError subclasses map to CLI exit code 2 (bad inputs or config),
NumericError subclasses to exit code 3 (numerical failure without fallback).
"""


class DpetError(Exception):
    """Base class for all toolkit errors."""


class ValidationError(DpetError):
    """Input, config, or file-format problem."""


class NumericError(DpetError):
    """Numerical failure with no usable fallback."""


# volume core
class GeometryInvalid(ValidationError):
    pass


class CropTooLarge(ValidationError):
    pass


class EmptyMask(ValidationError):
    pass


# nifti io
class BadMagic(ValidationError):
    pass


class UnsupportedDatatype(ValidationError):
    pass


class TruncatedData(ValidationError):
    pass


class MissingSchedule(ValidationError):
    pass


class ParseError(ValidationError):
    pass


class ScheduleInvalid(ValidationError):
    pass


class IoFailure(DpetError):
    pass


# phantom
class SpecInvalid(ValidationError):
    pass


class StepTooCoarse(ValidationError):
    pass


# registration
class InsufficientOverlap(NumericError):
    pass


# blood input
class NoComponentInBounds(NumericError):
    def __init__(self, msg, candidate_sizes=()):
        super().__init__(msg)
        self.candidate_sizes = tuple(candidate_sizes)


class AllZeroInput(ValidationError):
    pass


# parametric
class InputVanishes(NumericError):
    pass


class TooFewLateFrames(ValidationError):
    pass


class NonpositiveDose(ValidationError):
    pass


class NonpositiveWeight(ValidationError):
    pass


class EmptyWindow(ValidationError):
    pass


# tumor pipeline
class SeedOutOfRange(ValidationError):
    pass


class MaskOutsideCrop(ValidationError):
    pass
