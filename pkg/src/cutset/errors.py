"""Exception hierarchy shared by every cutset module."""


class CutsetError(Exception):
    """Base class for all errors raised by cutset."""


class DomainError(CutsetError, ValueError):
    """An argument lies outside the support it must belong to."""


class ModelError(CutsetError, ValueError):
    """A model or its data is malformed."""


class PartitionError(CutsetError):
    """A partition cannot be built or enumerated (e.g. too many cells)."""


class QuadratureError(CutsetError):
    """Per-cell quadrature failed to recover unit mass."""


class GridError(CutsetError, ValueError):
    """An auxiliary grid cannot be selected from the given candidates."""


class DegenerateError(CutsetError, ArithmeticError):
    """A numerical computation collapsed (zero variance, underflow, ...)."""


class ConfigError(CutsetError, ValueError):
    """A run configuration could not be parsed or validated."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
