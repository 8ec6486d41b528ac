class ArenaError(Exception):
    """Base class for errors raised by this package."""


class DomainError(ArenaError, ValueError):
    """An argument lies outside the domain of a function."""


class NumericalError(ArenaError, ArithmeticError):
    """An iterative or tail computation failed to produce a usable value."""


class DataError(ArenaError, ValueError):
    """Input data violates a schema or a type invariant."""
