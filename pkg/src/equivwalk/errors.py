"""Exception hierarchy shared across the package."""


class EquivWalkError(Exception):
    """Base class for every error raised by equivwalk."""


class ContractError(EquivWalkError, ValueError):
    """An operation was called outside its documented preconditions."""


class ShapeError(ContractError):
    """Dimensions of vectors, matrices or layers do not chain."""


class NumericError(EquivWalkError, ArithmeticError):
    """A computation produced a non-finite or otherwise invalid value."""


class OnKinkError(NumericError):
    """A pre-activation sits exactly on a non-differentiable point."""

    def __init__(self, message, layer_index=None, units=()):
        super().__init__(message)
        self.layer_index = layer_index
        self.units = tuple(units)


class NoDirectionError(EquivWalkError):
    """The requested eigenvector set (null or non-null) is empty."""


class UnsupportedError(EquivWalkError):
    """The configuration is valid but outside what the operation supports."""


class ModelFormatError(EquivWalkError):
    """A model, dataset or walk file is malformed."""
