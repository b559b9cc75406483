"""Exception types shared across the package."""

__all__ = ["ValidationError", "ConvergenceError", "InfeasibleError"]


class ValidationError(ValueError):
    """Input violates a documented invariant."""


class ConvergenceError(RuntimeError):
    """An iterative solver failed to reach its tolerance."""


class InfeasibleError(RuntimeError):
    """A constraint set is empty."""
