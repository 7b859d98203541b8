"""Exception types shared across the package."""


class Photo2AnimeError(Exception):
    """Base class for all package-specific errors."""


class InvalidInputError(Photo2AnimeError, ValueError):
    """Input data violates a basic validity requirement (e.g. non-finite values)."""


class ShapeError(Photo2AnimeError, ValueError):
    """Array shapes are incompatible with the requested operation."""


class ContractViolation(Photo2AnimeError, ValueError):
    """A documented precondition of an operation was not met."""


class ConfigurationError(Photo2AnimeError, ValueError):
    """Run configuration is invalid or refers to missing resources."""


class NumericError(Photo2AnimeError, ArithmeticError):
    """A numerical computation produced non-finite or unusable results."""


class CheckpointError(Photo2AnimeError, RuntimeError):
    """A checkpoint file is missing, corrupt, or has an unsupported version."""
