"""Exception types shared across the package.

The CLI maps ValidationError to exit code 1 and NumericError to exit code 2.
"""


class ValidationError(ValueError):
    """An input violates a documented precondition."""


class NumericError(ArithmeticError):
    """A computation left its safe numeric range (overflow, divergence)."""
