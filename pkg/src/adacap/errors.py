"""Exception hierarchy shared by every adacap module."""


class AdaCapError(Exception):
    """Base class for all adacap errors."""


class InputError(AdaCapError, ValueError):
    """Input contains non-finite values or is otherwise unusable."""


class ShapeError(AdaCapError, ValueError):
    """Array shapes are inconsistent."""


class DomainError(AdaCapError, ValueError):
    """A numeric argument lies outside its admissible domain."""


class ConfigError(AdaCapError, ValueError):
    """A configuration or dataset layout cannot be honoured."""


class SchemaError(AdaCapError, KeyError):
    """A table lacks a column the fitted pipeline expects."""


class RegimeError(AdaCapError):
    """A theory-lab instance is outside the intermediate SNR regime."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = dict(diagnostics or {})


class DiagnosticError(AdaCapError, ArithmeticError):
    """Training produced a non-finite quantity.

    ``iteration`` is the 1-based iteration at which the abort happened and
    ``member`` the ensemble member index when raised from an ensemble fit.
    """

    def __init__(self, message, iteration=None, member=None):
        super().__init__(message)
        self.iteration = iteration
        self.member = member
