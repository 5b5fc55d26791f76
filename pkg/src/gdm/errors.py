"""Exception hierarchy shared by the library and the CLI exit-code mapping."""


class GdmError(Exception):
    """Base class for all errors raised by :mod:`gdm`."""

    exit_code = 1


class ValidationError(GdmError, ValueError):
    """Invalid input data or configuration (CLI exit code 2)."""

    exit_code = 2


class ComputationError(GdmError, ArithmeticError):
    """A numerical step failed, e.g. a singular system (CLI exit code 1)."""

    exit_code = 1
