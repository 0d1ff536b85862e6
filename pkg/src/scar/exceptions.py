"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible dimensions."""


class StateError(RuntimeError):
    """Operation invoked on an object in the wrong state (no tape, no gradients, ...)."""


class DegenerateDistributionError(ValueError):
    """A covariance matrix is not usable (non-positive diagonal, not positive definite)."""


class InsufficientDataError(ValueError):
    """Too few samples to estimate the requested statistic."""


class ScenarioError(ValueError):
    """Method and removal scenario are incompatible, or a scenario precondition failed."""


class FormatError(ValueError):
    """A file does not conform to its binary layout. Carries the failing byte offset."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (byte offset {offset})"
        super().__init__(message)
        self.offset = offset
