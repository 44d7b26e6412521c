"""Exception hierarchy shared across the package.

ValidationError maps to CLI exit code 1, NumericalError to exit code 2.
"""


class ValidationError(ValueError):
    """Bad inputs: malformed files, shape mismatches, invalid configs."""


class ShapeError(ValidationError):
    """Operand shapes are incompatible."""


class NumericalError(ArithmeticError):
    """Non-finite values or degenerate numerical situations."""


class DegenerateRowError(NumericalError):
    """A softmax row has no valid position."""
