"""Exception types shared across the package.

The CLI maps these onto exit codes: InputError -> 1, NumericalError -> 2.
"""


class GraphcalError(Exception):
    """Base class for all package errors."""


class InputError(GraphcalError, ValueError):
    """Malformed or inconsistent user input (bad file, bad shape, bad flag)."""


class NumericalError(GraphcalError, RuntimeError):
    """A computation produced non-finite values or otherwise broke down."""
