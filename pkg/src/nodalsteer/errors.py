"""Exception types raised across the package."""


class TridiagonalError(ArithmeticError):
    """The implicit system lost diagonal dominance (dt too large for ||v||_inf)."""

    def __init__(self, dt, vmax, node=None):
        where = f" at node {node}" if node is not None else ""
        super().__init__(
            f"tridiagonal solve failed{where}: dt={dt:.3g}, max v={vmax:.3g}, "
            f"need dt*v/2 < 1"
        )
        self.dt = dt
        self.vmax = vmax


class PatternError(ValueError):
    """Sign pattern cannot be resolved on the grid."""


class PatternMismatch(ValueError):
    """Two profiles do not share zeros and orientation."""


class TrackerAbort(RuntimeError):
    """Curves merged or reached the boundary during a diffusion phase."""

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace


class SteeringFailure(RuntimeError):
    def __init__(self, message, reports=None):
        super().__init__(message)
        self.reports = reports or []


class StrategyFailure(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace
