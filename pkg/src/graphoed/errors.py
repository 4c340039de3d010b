"""Exception hierarchy shared across the package."""


class GraphoedError(Exception):
    """Base class for all package errors."""


class ConfigError(GraphoedError):
    """Invalid run configuration (bad keys, incompatible values)."""


class DataError(GraphoedError):
    """Malformed or inconsistent input data."""


class SolverError(GraphoedError):
    """Linear-solver failure (singular matrix, PCG non-convergence)."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class DesignError(GraphoedError):
    """Design-optimization failure (stalled or diverging objective)."""
