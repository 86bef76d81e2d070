"""Exception hierarchy shared by the library and the command line front end."""


class KmsvError(Exception):
    """Base class for all errors raised by this package."""

    exit_code = 1


class ParameterError(KmsvError, ValueError):
    """A numeric parameter (k, r, gamma, eps, fractions ...) is out of range."""

    exit_code = 2


class InputError(KmsvError, ValueError):
    """Array inputs have the wrong shape or contain non-finite values."""

    exit_code = 2


class DataFormatError(KmsvError, ValueError):
    """A task CSV file does not conform to the expected layout."""

    exit_code = 3


class MetricError(KmsvError, ValueError):
    """A metric is undefined for the given data (e.g. zero-variance targets)."""

    exit_code = 3


class NumericalError(KmsvError, ArithmeticError):
    """A linear solve or decomposition failed.

    ``iteration`` is set when the failure happened inside a solver loop.
    """

    exit_code = 4

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration
