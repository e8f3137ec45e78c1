"""Points of sign change: extraction from samples and tracking through diffusion phases."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import PatternError, TrackerAbort
from .grid import GridFunction
from .nonlinearity import Nonlinearity
from .solver import SolverConfig, _advance


@dataclass(frozen=True)
class SignPattern:
    """Ordered interior zeros and the sign of the function on (0, x_1)."""

    interior_zeros: tuple[float, ...]
    lam: int

    def __post_init__(self):
        z = tuple(float(v) for v in self.interior_zeros)
        object.__setattr__(self, "interior_zeros", z)
        if any(b <= a for a, b in zip(z, z[1:])):
            raise ValueError("zeros must be strictly increasing")
        if self.lam not in (-1, 1):
            raise ValueError("lam must be +1 or -1")

    @property
    def n(self) -> int:
        return len(self.interior_zeros)

    @property
    def with_ends(self) -> tuple[float, ...]:
        return (0.0, *self.interior_zeros, 1.0)

    @property
    def slopes(self) -> tuple[int, ...]:
        """Sign of the function on (x_l, x_{l+1}), l = 0..n+1 (last one by alternation)."""
        return tuple(self.lam * (-1) ** l for l in range(self.n + 2))

    def gaps(self) -> np.ndarray:
        return np.diff(self.with_ends)

    def min_gap(self) -> float:
        return float(np.min(self.gaps()))

    def matches(self, other: "SignPattern", tol: float) -> bool:
        return (self.n == other.n and self.lam == other.lam
                and all(abs(a - b) <= tol for a, b in zip(self.interior_zeros, other.interior_zeros)))


def extract_pattern(f: GridFunction, noise_floor: float = 0.0) -> SignPattern:
    """Sign changes between consecutive nodes whose magnitude exceeds ``noise_floor``.

    Each sign change is located by linear interpolation between the two
    bracketing significant nodes.
    """
    vals = f.values
    x = f.x
    idx = np.flatnonzero(np.abs(vals) > noise_floor)
    if idx.size == 0:
        raise PatternError("function is below the noise floor everywhere")
    s = np.sign(vals[idx])
    change = s[:-1] != s[1:]
    hidden = (~change) & (np.diff(idx) > 1)
    if np.any(hidden):
        k = int(np.flatnonzero(hidden)[0])
        raise PatternError(
            f"nodes {idx[k] + 1}..{idx[k + 1] - 1} are below the noise floor between "
            "same-sign values; refine the grid")
    i, j = idx[:-1][change], idx[1:][change]
    vi, vj = vals[i], vals[j]
    zeros = x[i] + (x[j] - x[i]) * vi / (vi - vj)
    for m in np.flatnonzero(j - i > 1):
        zeros[m] = _refine_wide_bracket(vals, x, i[m], j[m], zeros[m])
    return SignPattern(tuple(zeros), int(s[0]))


def _refine_wide_bracket(vals, x, i, j, fallback):
    """Zero inside a bracket whose inner nodes sit below the noise floor.

    If the raw values change sign exactly once, interpolate in that cell (a
    node that is exactly zero is the zero); otherwise keep the bracket-wide
    interpolation.  Bridging sub-floor nodes otherwise picks up an
    O(h^2 f''/f') bias that vanishes as soon as the zero leaves the node.
    """
    seg = vals[i:j + 1]
    exact = np.flatnonzero(seg[1:-1] == 0.0)
    flips = np.flatnonzero(seg[:-1] * seg[1:] < 0)
    if exact.size + flips.size != 1:
        return fallback
    if exact.size:
        return float(x[i + 1 + exact[0]])
    k = i + flips[0]
    return float(x[k] + (x[k + 1] - x[k]) * vals[k] / (vals[k] - vals[k + 1]))


def count_sign_changes(f: GridFunction, rel_floor: float = 1e-9) -> int:
    return extract_pattern(f, rel_floor * f.sup()).n


def sign_changes_lenient(vals: np.ndarray, rel_floor: float = 1e-9) -> int:
    """Sign changes among nodes above ``rel_floor * sup``; never raises."""
    v = vals[np.abs(vals) > rel_floor * np.max(np.abs(vals))]
    return int(np.count_nonzero(np.diff(np.sign(v))))


@dataclass
class CurveTrace:
    times: list[float] = field(default_factory=list)
    positions: list[tuple[float, ...]] = field(default_factory=list)
    exited: list[bool] = field(default_factory=list)
    events: list[str] = field(default_factory=list)

    def record(self, t: float, zeros: Sequence[float], event: str = ""):
        self.times.append(float(t))
        self.positions.append(tuple(float(z) for z in zeros))
        self.events.append(event)

    @property
    def n(self) -> int:
        return len(self.positions[0]) if self.positions else 0

    def array(self) -> np.ndarray:
        return np.array(self.positions, dtype=float).reshape(len(self.times), self.n)

    def speeds(self) -> np.ndarray:
        """Backward-difference speeds, one row per recorded time after the first."""
        return np.diff(self.array(), axis=0) / np.diff(self.times)[:, None]

    def min_gap(self) -> float:
        if not self.positions:
            return float("nan")
        p = self.array()
        full = np.hstack([np.zeros((len(p), 1)), p, np.ones((len(p), 1))])
        return float(np.min(np.diff(full, axis=1)))

    def is_ordered(self) -> bool:
        p = self.array()
        full = np.hstack([np.zeros((len(p), 1)), p, np.ones((len(p), 1))])
        return bool(np.all(np.diff(full, axis=1) > 0))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", *(f"xi_{l + 1}" for l in range(self.n)), "event"])
        for t, pos, ev in zip(self.times, self.positions, self.events):
            w.writerow([f"{t:.17g}", *(f"{p:.17g}" for p in pos), ev])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "CurveTrace":
        rows = list(csv.reader(io.StringIO(text)))
        tr = cls()
        for r in rows[1:]:
            tr.record(float(r[0]), [float(v) for v in r[1:-1]], r[-1])
        return tr


@dataclass(frozen=True)
class StopEvent:
    index: int  # zero that reached its target (0-based)
    time: float
    position: float


@dataclass
class TrackResult:
    trace: CurveTrace
    state: GridFunction
    event: StopEvent | None = None
    reason: str = "end"  # "end", "target" or "expired"
    states: list[GridFunction] | None = None
    max_jump_rate: float = 0.0


def _crossing(prev, new, target):
    d0, d1 = prev - target, new - target
    return d0 != 0.0 and d0 * d1 <= 0.0


def track_during_solve(u0: GridFunction, interval: tuple[float, float], nl: Nonlinearity,
                       targets: Sequence[float] | None = None,
                       active: Sequence[bool] | None = None,
                       cfg: SolverConfig | None = None,
                       noise_rel: float = 1e-9,
                       stop_rule: Callable[[CurveTrace], bool] | None = None,
                       keep_states: bool = False) -> TrackResult:
    """Run the pure-diffusion problem on ``interval`` and follow every zero.

    Stops early at the first time an active zero reaches its target (the time
    is interpolated linearly between steps and the last step is redone to land
    on it), or when ``stop_rule(trace)`` returns true.  Raises
    ``TrackerAbort`` if the sign-change count changes or two curves (or a curve
    and the boundary) come closer than 2h.
    """
    cfg = cfg or SolverConfig()
    grid = u0.grid
    h = grid.h
    zeros_fn = np.zeros(grid.n_nodes)
    pat = extract_pattern(u0, noise_rel * u0.sup())
    n = pat.n
    if targets is not None and len(targets) != n:
        raise ValueError(f"{len(targets)} targets for {n} zeros")
    act = [True] * n if active is None else list(active)
    trace = CurveTrace()
    trace.record(interval[0], pat.interior_zeros, "start")
    trace.exited = [False] * n
    states = [u0] if keep_states else None
    t0, t1 = interval
    if t1 <= t0:
        return TrackResult(trace, u0, None, "end", states)
    nsteps = max(1, math.ceil((t1 - t0) / cfg.dt_max - 1e-9))
    dt = (t1 - t0) / nsteps
    u = u0.values
    prev = pat.interior_zeros
    t = t0
    max_rate = 0.0

    def locate(vals, when):
        g = GridFunction(grid, vals)
        p = extract_pattern(g, noise_rel * g.sup())
        if p.n != n:
            kind = "merge or boundary exit" if p.n < n else "new sign change"
            trace.exited = [True] * n if p.n < n else trace.exited
            raise TrackerAbort(f"{kind} at t={when:.6g}: {n} -> {p.n} zeros", trace)
        if p.min_gap() < 2 * h:
            trace.exited = [z < 2 * h or z > 1 - 2 * h for z in p.interior_zeros]
            raise TrackerAbort(f"gap {p.min_gap():.3g} below 2h at t={when:.6g}", trace)
        return g, p.interior_zeros

    for j in range(nsteps):
        t_new = t1 if j == nsteps - 1 else t0 + (j + 1) * dt
        u_new = _advance(u, zeros_fn, dt, 1, h, nl, cfg)
        g_new, z_new = locate(u_new, t_new)
        if targets is not None:
            hits = []
            for l in range(n):
                if act[l] and _crossing(prev[l], z_new[l], targets[l]):
                    frac = (targets[l] - prev[l]) / (z_new[l] - prev[l])
                    hits.append((t + frac * (t_new - t), l))
            if hits:
                theta, l = min(hits)
                if theta > t:
                    u_new = _advance(u, zeros_fn, theta - t, 1, h, nl, cfg)
                    g_new, z_new = locate(u_new, theta)
                else:
                    g_new, z_new = GridFunction(grid, u), prev
                max_rate = max(max_rate, _rate(prev, z_new, theta - t))
                trace.record(theta, z_new, f"target:{l + 1}")
                if keep_states:
                    states.append(g_new)
                return TrackResult(trace, g_new, StopEvent(l, theta, z_new[l]), "target",
                                   states, max_rate)
        max_rate = max(max_rate, _rate(prev, z_new, t_new - t))
        trace.record(t_new, z_new)
        if keep_states:
            states.append(g_new)
        u, prev, t = u_new, z_new, t_new
        if stop_rule is not None and stop_rule(trace):
            trace.events[-1] = "expired"
            return TrackResult(trace, g_new, None, "expired", states, max_rate)
    return TrackResult(trace, GridFunction(grid, u), None, "end", states, max_rate)


def _rate(a, b, dt):
    if dt <= 0 or not a:
        return 0.0
    return float(np.max(np.abs(np.subtract(b, a)))) / dt


# --- derivative estimates at a zero --------------------------------------------

def derivatives_at(f: GridFunction, xi: float) -> tuple[float, float]:
    """First and second x-derivatives at ``xi`` from the cubic through four nodes."""
    h = f.grid.h
    n = f.grid.n_cells
    i = min(max(int(math.floor(xi / h)), 1), n - 2)
    xs = f.x[i - 1:i + 3]
    ys = f.values[i - 1:i + 3]
    c = np.polyfit(xs - xi, ys, 3)
    return float(c[2]), float(2 * c[1])


def zero_speed(f: GridFunction, xi: float) -> tuple[float, float]:
    """(-u_xx/u_x, u_x) at a zero."""
    d1, d2 = derivatives_at(f, xi)
    return -d2 / d1, d1


@dataclass(frozen=True)
class CrossCheck:
    max_residual: float
    max_speed: float
    min_slope: float


class SlopeTooSmall(RuntimeError):
    pass


def ode_cross_check(trace: CurveTrace, states: Sequence[GridFunction],
                    slope_floor: float = 0.25) -> CrossCheck:
    """Compare the tracked speed with -u_xx/u_x evaluated at the tracked zero.

    Speeds come from central differences in time at interior records.
    Raises ``SlopeTooSmall`` where |u_x| at a zero drops below ``slope_floor``.
    """
    if len(states) != len(trace.times):
        raise ValueError("trace and states are not aligned")
    t = np.array(trace.times)
    p = trace.array()
    if len(t) < 3:
        raise ValueError("need at least three records")
    resid = 0.0
    speed = 0.0
    min_slope = float("inf")
    for j in range(1, len(t) - 1):
        fd = (p[j + 1] - p[j - 1]) / (t[j + 1] - t[j - 1])
        for l in range(p.shape[1]):
            ode, wx = zero_speed(states[j], p[j, l])
            min_slope = min(min_slope, abs(wx))
            if abs(wx) < slope_floor:
                raise SlopeTooSmall(f"|u_x|={abs(wx):.3g} < {slope_floor} at t={t[j]:.6g}, zero {l + 1}")
            resid = max(resid, abs(fd[l] - ode))
            speed = max(speed, abs(fd[l]))
    return CrossCheck(resid, speed, min_slope)
