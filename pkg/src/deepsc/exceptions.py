"""Exception hierarchy shared across the package."""


class DeepSCError(Exception):
    """Base class for all package errors."""


class InvalidInputError(DeepSCError, ValueError):
    """Raised when an argument violates an operation's precondition."""


class GridTooSmallError(InvalidInputError):
    """Raised when a sampling grid cannot host the requested operation."""


class FormatError(DeepSCError, ValueError):
    """Base class for text/archive parse failures."""


class EmptyInputError(FormatError):
    pass


class HeaderError(FormatError):
    pass


class DimensionMismatchError(FormatError):
    pass


class TruncatedPayloadError(FormatError):
    pass


class ModelError(DeepSCError):
    """Base class for model archive failures."""


class ModelVersionError(ModelError):
    pass


class ModelInvariantError(ModelError):
    pass


class ChainingError(ModelInvariantError):
    """Adjacent layers disagree on dimensions or an embedding is missing."""


class CorruptModelError(ModelError):
    pass


class NumericalError(DeepSCError, ArithmeticError):
    """Raised when a non-finite value is detected in a computation."""
