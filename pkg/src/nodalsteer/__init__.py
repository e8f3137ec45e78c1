"""Steering the sign changes of 1-D semilinear heat equations with bilinear controls.

The package layers as follows:

- ``grid``: uniform grid on [0, 1] and discrete norms
- ``nonlinearity``: Lipschitz reaction terms with f(0) = 0
- ``solver``: Crank-Nicolson time stepping with a piecewise-constant potential
- ``profiles``: smooth profiles with prescribed zeros
- ``tracker``: zeros of grid functions and their evolution
- ``steering``: one-step controls that move a state near a target with the same zeros
- ``strategy``: the round-by-round loop that moves zeros to targets
- ``cli``: scenario files and the ``nodalsteer`` command
"""

from .errors import (PatternError, PatternMismatch, SteeringFailure, StrategyFailure,
                     TrackerAbort, TridiagonalError)
from .grid import Grid, GridFunction, h1_seminorm, l2_norm
from .kernels import BACKEND
from .nonlinearity import Nonlinearity
from .profiles import ProfileSpec, build, uniform_bound_check
from .solver import ControlSchedule, SolverConfig, solve
from .steering import steer
from .strategy import StrategyConfig, audit, run
from .tracker import SignPattern, extract_pattern, track_during_solve

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ControlSchedule", "Grid", "GridFunction", "Nonlinearity", "PatternError",
    "PatternMismatch", "ProfileSpec", "SignPattern", "SolverConfig", "SteeringFailure",
    "StrategyConfig", "StrategyFailure", "TrackerAbort", "TridiagonalError", "audit", "build",
    "extract_pattern", "h1_seminorm", "l2_norm", "run", "solve", "steer", "track_during_solve",
    "uniform_bound_check",
]
