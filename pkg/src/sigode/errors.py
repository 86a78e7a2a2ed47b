"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands live in different truncated algebras or have wrong sizes."""


class DomainError(ValueError):
    """Input outside the mathematical domain of an operation."""


class NotLieElementError(ValueError):
    """Tensor could not be written in the Lyndon bracket basis."""


class SolverError(RuntimeError):
    """Numerical integration failed (non-finite state)."""
