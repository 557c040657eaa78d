"""Exception types shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, estimation failures with 3, and data/parse problems with 4.
"""


class RpmixError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(RpmixError, ValueError):
    """An argument violates a documented precondition."""


class NumericalError(RpmixError, ArithmeticError):
    """A numerical operation failed (singular matrix, Cholesky breakdown, ...)."""


class EstimationError(RpmixError, RuntimeError):
    """An estimation step could not produce a usable result."""


class ParseError(RpmixError, ValueError):
    """Malformed input data.

    Carries ``line`` and ``column`` (1-based, when known) so callers can
    point at the offending cell.
    """

    def __init__(self, message: str, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        loc = ""
        if line is not None:
            loc = f" (line {line}" + (f", column {column}" if column is not None else "") + ")"
        super().__init__(message + loc)


class ConfigError(RpmixError, ValueError):
    """Invalid run configuration."""
