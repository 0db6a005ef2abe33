"""Exception types shared across the package."""


class OpinionNashError(Exception):
    pass


class DomainError(OpinionNashError, ValueError):
    """Time or parameter outside the admissible domain."""


class DegenerateMultiplierError(OpinionNashError, ZeroDivisionError):
    """The Lagrange multiplier trajectory vanishes where it is divided by."""


class SaturationError(OpinionNashError, OverflowError):
    """An exponential overflowed double precision."""


class DegenerateCubicError(OpinionNashError, ValueError):
    """Leading coefficient of a cubic is zero.

    For the control cubic this happens at ``s = 0``; callers fall back to the
    quadratic-penalty limit ``u = 0``.
    """


class StationarityError(OpinionNashError, RuntimeError):
    def __init__(self, message, best_residual=None):
        super().__init__(message)
        self.best_residual = best_residual


class ConvergenceError(OpinionNashError, RuntimeError):
    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


class DivergenceError(OpinionNashError, FloatingPointError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class SingularCurvatureError(OpinionNashError, ZeroDivisionError):
    pass


class AliasingError(OpinionNashError, ValueError):
    """Field does not decay at the grid boundary, so the periodic transform would wrap it."""


class GridMismatchError(OpinionNashError, ValueError):
    pass
