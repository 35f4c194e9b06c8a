"""Exception types shared across the package.

The CLI maps these onto exit codes (validation 2, non-convergence 3,
statistical failure 4).
"""


class ValidationError(ValueError):
    """Malformed or out-of-contract input (bad rows, failed assumptions, ...)."""


class ConvergenceError(RuntimeError):
    """An iterative solver ran out of its iteration budget."""

    def __init__(self, message: str, residual: float | None = None):
        super().__init__(message)
        self.residual = residual


class StatisticalError(RuntimeError):
    """A Monte Carlo estimate cannot be formed (e.g. no surviving runs)."""
