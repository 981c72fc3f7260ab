"""Exception hierarchy shared by every shiftcal module."""


class ShiftcalError(Exception):
    """Base class for all errors raised by shiftcal."""


class InvalidInputError(ShiftcalError, ValueError):
    """An argument is outside the domain of the operation."""


class ShapeError(ShiftcalError, ValueError):
    """Array dimensions do not line up."""


class DivergedError(ShiftcalError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch


class SupportError(ShiftcalError, ValueError):
    """A point lies outside the support required by an oracle."""


class ParseError(ShiftcalError, ValueError):
    """A CSV or JSON file could not be parsed."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class ConfigError(ShiftcalError, ValueError):
    """A run configuration is missing inputs or names unknown options."""


class BoundViolation(ShiftcalError, AssertionError):
    """An inequality that must hold by construction was violated."""

    def __init__(self, message, instance=None):
        super().__init__(message)
        self.instance = instance
