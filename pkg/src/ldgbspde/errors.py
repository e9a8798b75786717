"""Exception types raised by the solver library."""


class DegenerateBasisError(ValueError):
    """A local mass matrix or projection system is numerically singular."""


class DriverEvaluationError(ArithmeticError):
    """The reaction term returned a non-finite value.

    The offending point is kept on the exception as ``point``, a dict with keys
    ``x, t, w, u, v, psi``.
    """

    def __init__(self, message, point=None):
        super().__init__(message)
        self.point = point or {}


class InvalidBatchError(ValueError):
    """Batch too small for batch statistics (train mode needs at least 2 rows)."""


class TrainingDivergenceError(RuntimeError):
    def __init__(self, message, stage=None, step=None, last_finite_loss=None):
        super().__init__(message)
        self.stage = stage
        self.step = step
        self.last_finite_loss = last_finite_loss


class RankDeficiencyError(ArithmeticError):
    """Least-squares design matrix too ill-conditioned to trust."""
