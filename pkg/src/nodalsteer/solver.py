"""Crank-Nicolson integration of u_t = u_xx + v(x,t) u + f(u) with u(0)=u(1)=0.

The bilinear term v*u is linear in u and sits in the implicit operator
together with diffusion; f goes through Picard sweeps of the trapezoidal
rule.  Controls are piecewise static: constant in time on each piece of a
``ControlSchedule``.  Steps never straddle a piece boundary.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from . import kernels
from .grid import Grid, GridFunction, l2_norm
from .nonlinearity import Nonlinearity

Observer = Callable[[float, GridFunction], object]


@dataclass(frozen=True)
class SolverConfig:
    dt_max: float = 1e-4
    picard_iters: int = 2
    theta: float = 0.5

    def __post_init__(self):
        if not self.dt_max > 0:
            raise ValueError("dt_max must be positive")
        if self.picard_iters < 1:
            raise ValueError("picard_iters must be >= 1")
        if self.theta != 0.5:
            raise ValueError("only the Crank-Nicolson weight 1/2 is supported")


@dataclass(frozen=True)
class ControlPiece:
    t_start: float
    t_end: float
    coeff: GridFunction
    dt_max: float | None = None  # extra cap for this piece only

    def __post_init__(self):
        if self.t_end < self.t_start:
            raise ValueError("piece ends before it starts")
        if not np.all(np.isfinite(self.coeff.values)):
            raise ValueError("control coefficient must be finite")

    @property
    def duration(self) -> float:
        return self.t_end - self.t_start


@dataclass(frozen=True)
class ControlSchedule:
    pieces: tuple[ControlPiece, ...]

    def __post_init__(self):
        pieces = tuple(self.pieces)
        if not pieces:
            raise ValueError("schedule needs at least one piece")
        for a, b in zip(pieces, pieces[1:]):
            if b.t_start != a.t_end:
                raise ValueError(f"pieces not contiguous: {a.t_end} != {b.t_start}")
        object.__setattr__(self, "pieces", pieces)

    @property
    def interval(self) -> tuple[float, float]:
        return self.pieces[0].t_start, self.pieces[-1].t_end

    @property
    def breakpoints(self) -> list[float]:
        return [p.t_start for p in self.pieces] + [self.pieces[-1].t_end]

    @classmethod
    def static(cls, coeff: GridFunction, t_start: float, t_end: float, dt_max=None) -> "ControlSchedule":
        return cls((ControlPiece(t_start, t_end, coeff, dt_max),))

    @classmethod
    def free(cls, grid: Grid, t_start: float, t_end: float) -> "ControlSchedule":
        """v = 0: the pure-diffusion problem on [t_start, t_end]."""
        return cls.static(grid.zeros(), t_start, t_end)

    def sup_norm(self) -> float:
        return max(p.coeff.sup() for p in self.pieces)


def _advance(u: np.ndarray, coeff: np.ndarray, dt: float, nsteps: int, h: float,
             nl: Nonlinearity, cfg: SolverConfig) -> np.ndarray:
    return kernels.cn_advance(u, coeff, dt, h, nsteps, nl.code, float(nl.a), cfg.picard_iters)


def step(u: GridFunction, coeff: GridFunction, dt: float, nl: Nonlinearity,
         cfg: SolverConfig | None = None) -> GridFunction:
    """One Crank-Nicolson step of length dt."""
    cfg = cfg or SolverConfig(dt_max=dt)
    if dt <= 0 or dt > cfg.dt_max * (1 + 1e-12):
        raise ValueError(f"dt={dt} outside (0, dt_max={cfg.dt_max}]")
    if not u.is_dirichlet():
        raise ValueError("state violates the homogeneous Dirichlet condition")
    vals = _advance(u.values, coeff.values, dt, 1, u.grid.h, nl, cfg)
    return GridFunction(u.grid, vals)


def piece_steps(piece: ControlPiece, cfg: SolverConfig, stops: Sequence[float] = ()) -> list[tuple[float, float, int]]:
    """Split a piece into runs of equal steps that land on the piece ends and on ``stops``."""
    cap = cfg.dt_max if piece.dt_max is None else min(cfg.dt_max, piece.dt_max)
    marks = [piece.t_start] + sorted(s for s in stops if piece.t_start < s < piece.t_end) + [piece.t_end]
    runs = []
    for a, b in zip(marks, marks[1:]):
        if b <= a:
            continue
        n = max(1, math.ceil((b - a) / cap - 1e-9))
        runs.append((b, (b - a) / n, n))
    return runs


@dataclass
class SolveResult:
    state: GridFunction
    times: list[float] = field(default_factory=list)
    observed: dict[str, list] = field(default_factory=dict)

    def to_csv(self) -> str:
        names = list(self.observed)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *names])
        for j, t in enumerate(self.times):
            w.writerow([f"{t:.17g}", *(f"{float(self.observed[k][j]):.17g}" for k in names)])
        return buf.getvalue()


def solve(u0: GridFunction, schedule: ControlSchedule, nl: Nonlinearity,
          cfg: SolverConfig | None = None,
          observers: dict[str, Observer] | Iterable[Observer] | None = None,
          stops: Sequence[float] = ()) -> SolveResult:
    """Advance ``u0`` over every piece of ``schedule``.

    ``observers`` is either a mapping name -> callback, whose return values are
    recorded per accepted step, or a plain list of callbacks.  Every callback
    receives ``(t, state)``.  ``stops`` are extra times the stepping must hit.
    """
    cfg = cfg or SolverConfig()
    if not u0.is_dirichlet():
        raise ValueError("initial state violates the homogeneous Dirichlet condition")
    if isinstance(observers, dict):
        named = dict(observers)
    else:
        named = {f"obs{i}": cb for i, cb in enumerate(observers or [])}
    result = SolveResult(u0, [], {k: [] for k in named})
    grid = u0.grid
    u = u0.values
    t = schedule.interval[0]
    for piece in schedule.pieces:
        if piece.duration == 0:
            continue
        coeff = piece.coeff.values
        for end, dt, n in piece_steps(piece, cfg, stops):
            if not named:
                u = _advance(u, coeff, dt, n, grid.h, nl, cfg)
                t = end
                continue
            t0 = t
            for j in range(n):
                u = _advance(u, coeff, dt, 1, grid.h, nl, cfg)
                t = end if j == n - 1 else t0 + (j + 1) * dt
                state = GridFunction(grid, u)
                result.times.append(t)
                for name, cb in named.items():
                    result.observed[name].append(cb(t, state))
        t = piece.t_end
    result.state = GridFunction(grid, u)
    return result


# --- convergence study -------------------------------------------------------

FIXTURES = {
    # name: (u0(x), exact(x, t), nonlinearity, v constant)
    "heat": (lambda x: np.sin(np.pi * x),
             lambda x, t: np.exp(-np.pi**2 * t) * np.sin(np.pi * x),
             Nonlinearity("zero"), 0.0),
    "linear-reaction": (lambda x: np.sin(np.pi * x),
                        lambda x, t: np.exp((2.0 + 0.5 - np.pi**2) * t) * np.sin(np.pi * x),
                        Nonlinearity("linear", 0.5), 2.0),
    "zero": (lambda x: 0.0 * x, lambda x, t: 0.0 * x, Nonlinearity("zero"), 0.0),
}


def fixture_errors(fixture: str, levels: int = 4, n0: int = 100, T: float = 0.1,
                   dt_per_h: float = 0.25) -> tuple[np.ndarray, np.ndarray]:
    """L2 errors of the fixture at n0, 2 n0, 4 n0, ... cells with dt = dt_per_h * h."""
    u0f, exact, nl, vconst = FIXTURES[fixture]
    hs, errs = [], []
    for lev in range(levels):
        grid = Grid(n0 * 2**lev)
        u0 = grid.sample(u0f, dirichlet=True)
        sched = ControlSchedule.static(grid.constant(vconst), 0.0, T)
        out = solve(u0, sched, nl, SolverConfig(dt_max=dt_per_h * grid.h)).state
        ref = grid.sample(lambda x: exact(x, T), dirichlet=True)
        hs.append(grid.h)
        errs.append(l2_norm(out - ref))
    return np.array(hs), np.array(errs)


def convergence_study(fixture: str, levels: int = 4, n0: int = 100, T: float = 0.1) -> float:
    """Least-squares slope of log(error) against log(h); nan if all errors vanish."""
    if levels < 3:
        raise ValueError("need at least three levels")
    hs, errs = fixture_errors(fixture, levels, n0, T)
    if np.all(errs == 0):
        return float("nan")
    slope, _ = np.polyfit(np.log(hs), np.log(errs), 1)
    return float(slope)
