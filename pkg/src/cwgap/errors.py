"""Exception types shared across the package.

Each maps to a CLI exit code (see ``cli.EXIT_CODES``).
"""


class CwgapError(Exception):
    """Base class for all package errors."""


class UsageError(CwgapError, ValueError):
    """Bad arguments passed to a library function."""


class ConfigError(CwgapError, ValueError):
    """Invalid experiment configuration or out-of-range model parameter."""


class NumericalFailure(CwgapError, ArithmeticError):
    """An iterative routine did not converge or produced non-finite output."""


class NotSPDError(NumericalFailure):
    """Cholesky hit a non-positive pivot."""


class UnsupportedError(CwgapError, NotImplementedError):
    """Requested feature lies outside what is implemented (e.g. grids above 2-D)."""


class InapplicableError(CwgapError):
    """A quantity is undefined for this input (e.g. zero spectral gap)."""
