"""Exception taxonomy shared by the library and the CLI."""


class ExpJacError(Exception):
    """Base class for every error raised by this package."""


class FieldFormatError(ExpJacError, ValueError):
    """A DFLD file could not be decoded."""


class BadMagic(FieldFormatError):
    pass


class ShapeMismatch(ExpJacError, ValueError):
    pass


class TruncatedPayload(FieldFormatError):
    pass


class UnsupportedPrecision(FieldFormatError):
    pass


class IoFailure(ExpJacError, OSError):
    pass


class ShapeTooSmall(ExpJacError, ValueError):
    pass


class NonFiniteInput(ExpJacError, ValueError):
    """Raised when NaN/Inf reaches a numerical kernel.

    ``voxel`` holds the first offending grid index when the input was a field.
    """

    def __init__(self, message, voxel=None):
        super().__init__(message)
        self.voxel = voxel


class PlanMismatch(ExpJacError, ValueError):
    pass


class UnknownStructure(ExpJacError, KeyError):
    pass


class NumericalFailure(ExpJacError, ArithmeticError):
    """Optimisation diverged (loss became NaN/Inf)."""
