"""The round loop: steer to a profile with chosen curvatures, let the zeros drift, repeat.

Each round k builds a profile w_k whose zeros sit at the current zeros, with
curvature chosen so that every active zero starts moving towards its target
at unit speed.  The state is steered onto w_k, then the control is switched
off and the zeros drift under pure diffusion while a tracker follows them.
A round ends when an active zero reaches its target or when the drift stops
pointing the right way.  Once every zero is parked, a final steering phase
lands on a copy of the target whose zeros match the achieved ones.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import PatternMismatch, SteeringFailure, StrategyFailure, TrackerAbort
from .grid import GridFunction, l2_norm
from .nonlinearity import Nonlinearity
from .profiles import ProfileSpec, build
from .solver import SolverConfig
from .steering import SteeringReport, steer
from .tracker import CurveTrace, SignPattern, StopEvent, extract_pattern, track_during_solve

ETA_RULES = ("geometric", "paper-N")
SCHEDULES = ("adaptive", "fixed")
NOISE_REL = 1e-9


class GridRefinementRequired(ValueError):
    """The current zeros are too close for the grid to resolve a profile."""


@dataclass(frozen=True)
class StrategyConfig:
    """Tolerances and knobs of the round loop.

    ``M0_star`` of None means calibrate from a pilot diffusion phase.
    ``eta_floor`` of None means eta/5.  ``speed_floor`` is the fraction of
    unit speed below which a drifting zero is considered spent.
    """

    epsilon: float = 0.01
    eta: float = 0.05
    theta: float = 0.5
    M0_star: float | None = None
    k_max: int = 5000
    per_phase_eta_rule: str = "geometric"
    eta_floor: float | None = None
    rho_fraction: float = 0.25
    schedule: str = "adaptive"
    phase_max: float = 5e-2
    speed_floor: float = 0.25
    dt_diffuse: float = 2e-5
    steps_per_rho2: float = 1000.0
    t_min: float = 1e-8
    delta: float | None = None
    horizon_T: float | None = None

    def __post_init__(self):
        if not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")
        if not (self.epsilon > 0 and self.eta > 0):
            raise ValueError("epsilon and eta must be positive")
        if self.M0_star is not None and not self.M0_star > 0:
            raise ValueError("M0_star must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be positive")
        if self.per_phase_eta_rule not in ETA_RULES:
            raise ValueError(f"per_phase_eta_rule must be one of {ETA_RULES}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}")
        if not 0 < self.rho_fraction <= 0.5:
            raise ValueError("rho_fraction must lie in (0, 1/2]")

    @property
    def floor(self) -> float:
        return self.eta / 5 if self.eta_floor is None else self.eta_floor

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in self.__dataclass_fields__}

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown strategy keys: {sorted(unknown)}")
        return cls(**d)


# --- schedule constants --------------------------------------------------------

def s_theta(theta: float, rtol: float = 1e-8) -> float:
    """sum_{j>=1} j^-(1+theta/2), partial sum plus an Euler-Maclaurin tail."""
    p = 1.0 + theta / 2
    J = max(64, int(math.ceil((1.0 / rtol) ** (1.0 / (p + 3)))) * 4)
    j = np.arange(1, J + 1, dtype=float)
    head = float(np.sum(j ** -p))
    tail = J ** (1 - p) / (p - 1) - 0.5 * J ** -p + p * J ** (-p - 1) / 12
    return head + tail


def tau_base(cfg: StrategyConfig, rho0_star: float, M0: float | None = None) -> float:
    """(eps rho0* / (4 M0* s_theta))^(2/(2+theta)), the k = 1 schedule value."""
    M0 = cfg.M0_star if M0 is None else M0
    if M0 is None:
        raise ValueError("M0_star is not set")
    ratio = cfg.epsilon * rho0_star / (4 * M0 * s_theta(cfg.theta))
    return ratio ** (2.0 / (2.0 + cfg.theta))


def schedule_tau(cfg: StrategyConfig, rho0_star: float, k: int, M0: float | None = None) -> float:
    if k < 1:
        raise ValueError("rounds start at k = 1")
    return tau_base(cfg, rho0_star, M0) / k


def decay_constants(cfg: StrategyConfig, rho0_star: float, n: int, M0: float | None = None):
    """(c1, c2) of the target-distance bound."""
    c1 = cfg.epsilon * rho0_star * n / (4 * s_theta(cfg.theta))
    return c1, tau_base(cfg, rho0_star, M0)


# --- per-round choices ---------------------------------------------------------

LANDING_TOL = 1e-6  # stop events land zeros far closer than this


def reach_tolerance(epsilon: float, n: int, floor: float = LANDING_TOL) -> float:
    """Distance to target at which a zero counts as reached."""
    return max(epsilon / (2 * max(n, 1)), floor)


def surrogate_epsilon(u_star: GridFunction, targets: Sequence[float], cfg: StrategyConfig,
                      min_eps: float = 1e-7) -> float:
    """Largest eps / 2^j such that moving every zero of ``u_star`` by up to eps
    (any combination of directions) keeps the warped copy within eta/3."""
    eps = cfg.epsilon
    n = len(targets)
    while eps >= min_eps:
        worst = 0.0
        for signs in itertools.product((-1.0, 1.0), repeat=n):
            shifted = [x + s * eps for x, s in zip(targets, signs)]
            if all(b > a for a, b in zip((0.0, *shifted), (*shifted, 1.0))):
                worst = max(worst, l2_norm(u_star - warp_to_zeros(u_star, targets, shifted)))
        if worst <= cfg.eta / 3:
            return eps
        eps /= 2
    raise ValueError(f"no epsilon >= {min_eps:g} keeps the target surrogate within eta/3")


def choose_directions(zeros_now: SignPattern, targets: SignPattern, inactive) -> tuple[int, ...]:
    if zeros_now.n != targets.n or zeros_now.lam != targets.lam:
        raise PatternMismatch("current and target patterns differ in length or orientation")
    return tuple(0 if l in inactive else int(np.sign(b - a))
                 for l, (a, b) in enumerate(zip(zeros_now.interior_zeros, targets.interior_zeros)))


def build_round_profile(zeros_now: SignPattern, mu: Sequence[int], lam: int,
                        h: float | None = None, rho_fraction: float = 0.25) -> ProfileSpec:
    """Unit slopes alternating from ``lam``; curvature -alpha*mu at each interior zero.

    With w' = alpha and w'' = -alpha*mu at a zero, the zero starts moving at
    -w''/w' = mu.
    """
    if len(mu) != zeros_now.n:
        raise ValueError("one direction per zero")
    alphas = [lam * (-1) ** l for l in range(zeros_now.n + 2)]
    betas = [0.0] + [-float(alphas[l + 1] * m) for l, m in enumerate(mu)] + [0.0]
    gap = zeros_now.min_gap()
    rho = rho_fraction * gap
    if h is not None and (gap < 8 * h or rho < 8 * h):
        raise GridRefinementRequired(
            f"min gap {gap:.4g} gives rho={rho:.4g} < 8h={8 * h:.4g}; refine the grid")
    return ProfileSpec(zeros_now.with_ends, tuple(alphas), tuple(betas), rho)


def horizon_tolerance(k: int, N: int, C: Sequence[float], L: float, T_tilde: float, delta: float) -> float:
    """delta C_k / (2^(N-k) e^((N-k) L T~) prod_{h=k}^N C_h), C indexed from 1."""
    if not 1 <= k <= N or len(C) < N:
        raise ValueError("need 1 <= k <= N and N constants")
    # log space: 2^(N-k) and the product overflow for long horizons
    log_den = (N - k) * (math.log(2.0) + L * T_tilde) + float(np.sum(np.log(C[k - 1:N])))
    return delta * C[k - 1] * math.exp(-log_den)


def tolerance_budget(cfg: StrategyConfig, round_reports: Sequence[SteeringReport],
                     L: float = 0.0, k: int | None = None) -> float:
    """Tolerance for the next steering phase (round ``len(round_reports) + 1`` by default)."""
    k = len(round_reports) + 1 if k is None else k
    if cfg.per_phase_eta_rule == "geometric":
        return cfg.eta / 3 * 0.5**k
    N = cfg.k_max
    K_guess = max([r.K for r in round_reports], default=2.0)
    C = [math.sqrt(2) * r.K * math.exp(L) for r in round_reports[:N]]
    C += [math.sqrt(2) * K_guess * math.exp(L)] * (N - len(C))
    delta = cfg.eta / 3 if cfg.delta is None else cfg.delta
    T_tilde = 0.0 if cfg.horizon_T is None else cfg.horizon_T
    return horizon_tolerance(min(k, N), N, C, L, T_tilde, delta)


# --- records -------------------------------------------------------------------

@dataclass
class RoundState:
    k: int
    current_zeros: SignPattern
    inactive: frozenset
    mu: tuple[int, ...]
    S_k: float = 0.0
    T_k: float = 0.0
    J_star: float = 0.0
    gap: float = 0.0

    def __post_init__(self):
        if any(self.mu[l] != 0 for l in self.inactive):
            raise ValueError("inactive zeros must have mu = 0")


@dataclass
class RoundRecord:
    state: RoundState
    spec: ProfileSpec
    eta_k: float
    steering: SteeringReport
    tau_tilde: float
    tau: float
    reason: str
    event: StopEvent | None
    r_k: float
    initial_speeds: tuple[float, ...]
    reference_speeds: tuple[float, ...]
    zeros_end: tuple[float, ...]
    J_end: float
    gap_phase: float

    def to_dict(self) -> dict:
        s = self.state
        return {
            "k": s.k, "zeros_start": list(s.current_zeros.interior_zeros),
            "inactive": sorted(s.inactive), "mu": list(s.mu),
            "S_k": s.S_k, "T_k": s.T_k, "J_start": s.J_star,
            "profile": self.spec.to_dict(), "eta_k": self.eta_k,
            "steering": self.steering.to_dict(),
            "C_k": math.sqrt(2) * self.steering.K * self.steering.exp_L,
            "tau_tilde": self.tau_tilde, "tau": self.tau, "reason": self.reason,
            "event": None if self.event is None else
            {"index": self.event.index, "time": self.event.time, "position": self.event.position},
            "r_k": self.r_k, "initial_speeds": list(self.initial_speeds),
            "reference_speeds": list(self.reference_speeds),
            "zeros_end": list(self.zeros_end), "J_end": self.J_end, "gap_phase": self.gap_phase,
        }


TRACE_PHASES = ("init", "steer", "diffuse", "final")


@dataclass
class RunTrace:
    n: int
    targets: tuple[float, ...]
    rows: list[tuple] = field(default_factory=list)  # (t, phase, round, zeros, J, gap, l2)
    rounds: list[RoundRecord] = field(default_factory=list)
    inactive_since: dict[int, int] = field(default_factory=dict)
    final: dict = field(default_factory=dict)
    constants: dict = field(default_factory=dict)

    def add_row(self, t, phase, k, zeros, l2):
        if self.rows and t <= self.rows[-1][0]:
            raise ValueError(f"trace time {t} does not increase past {self.rows[-1][0]}")
        z = tuple(float(v) for v in zeros)
        J = float(sum(abs(a - b) for a, b in zip(z, self.targets)))
        self.rows.append((float(t), phase, int(k), z, J, _gap(z), float(l2)))

    def header(self) -> list[str]:
        return ["t", "phase", "round", *(f"xi_{l + 1}" for l in range(self.n)), "J_star", "gap", "l2_err"]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        for t, ph, k, z, J, g, e in self.rows:
            w.writerow([f"{t:.17g}", ph, k, *(f"{v:.17g}" for v in z),
                        f"{J:.17g}", f"{g:.17g}", f"{e:.17g}"])
        return buf.getvalue()

    @staticmethod
    def read_csv(text: str) -> list[dict]:
        rows = list(csv.DictReader(io.StringIO(text)))
        for r in rows:
            for key, val in r.items():
                if key not in ("phase", "round"):
                    r[key] = float(val)
            r["round"] = int(r["round"])
        return rows

    def curves_dat(self) -> str:
        """Gnuplot index blocks, one per (round, phase), separated by two blank lines."""
        out = io.StringIO()
        key = None
        for t, ph, k, z, J, g, e in self.rows:
            if (k, ph) != key:
                if key is not None:
                    out.write("\n\n")
                out.write(f"# round {k} phase {ph}\n# t {' '.join(f'xi_{l + 1}' for l in range(self.n))}\n")
                key = (k, ph)
            out.write(f"{t:.10e} " + " ".join(f"{v:.10e}" for v in z) + "\n")
        return out.getvalue()

    def summary(self) -> dict:
        return {
            "n_zeros": self.n, "targets": list(self.targets),
            "rounds": [r.to_dict() for r in self.rounds],
            "inactive_since": {str(l + 1): k for l, k in sorted(self.inactive_since.items())},
            "constants": self.constants, "final": self.final,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def _gap(zeros) -> float:
    return float(np.min(np.diff((0.0, *zeros, 1.0))))


# --- functionals and audits ----------------------------------------------------

def target_distance(zeros, targets) -> float:
    return float(np.sum(np.abs(np.subtract(zeros, targets))))


def gap_functional(positions) -> float:
    """Minimum adjacent distance (boundaries included) over a list of zero tuples."""
    return min(_gap(z) for z in positions)


def functionals(trace: RunTrace) -> tuple[np.ndarray, np.ndarray]:
    """(J* at the end of every round, gap at every recorded time)."""
    if not trace.rows:
        raise ValueError("empty trace")
    J = np.array([r.J_end for r in trace.rounds])
    gaps = np.array([row[5] for row in trace.rows])
    return J, gaps


@dataclass(frozen=True)
class DecayAudit:
    c1: float
    c2: float
    s_theta: float
    bound: tuple[float, ...]
    slack: tuple[float, ...]
    min_slack: float
    gap_min: float
    gap_floor: float
    gap_ok: bool
    per_round_decrease_ratio: float  # min over rounds without an event of (J_{k-1}-J_k) k / c2
    ok: bool

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def decay_audit(trace: RunTrace, cfg: StrategyConfig, rho0_star: float, M0: float | None = None,
                J0: float | None = None) -> DecayAudit:
    """Check recorded J* against J0 + c1 sum k^-(1+theta/2) - c2 sum_{k>n} 1/k, and the gap floor."""
    M0 = M0 if M0 is not None else (cfg.M0_star or trace.constants.get("M0_star"))
    n = trace.n
    if M0 is None and not trace.rounds:
        # nothing moved, so nothing was calibrated and c2 never enters the bound
        c1, c2 = decay_constants(cfg, rho0_star, n, 1.0)[0], float("nan")
    else:
        c1, c2 = decay_constants(cfg, rho0_star, n, M0)
    if J0 is None:
        J0 = trace.rows[0][4]
    p = 1 + cfg.theta / 2
    bound, slack = [], []
    J_prev, ratios = J0, []
    for r in trace.rounds:
        k = r.state.k
        ks = np.arange(1, k + 1, dtype=float)
        b = J0 + c1 * np.sum(ks**-p) - c2 * np.sum(1.0 / ks[n:])
        bound.append(float(b))
        slack.append(float(b - r.J_end))
        if r.event is None and r.state.mu and any(r.state.mu):
            ratios.append((J_prev - r.J_end) * k / c2)
        J_prev = r.J_end
    _, gaps = functionals(trace)
    gmin = float(np.min(gaps))
    floor = rho0_star / 2
    min_slack = min(slack, default=float("inf"))
    return DecayAudit(c1, c2, s_theta(cfg.theta), tuple(bound), tuple(slack), min_slack,
                      gmin, floor, gmin >= floor, min(ratios, default=float("inf")),
                      min_slack >= 0 and gmin >= floor)


# --- the loop ------------------------------------------------------------------

def speed_stop_rule(mu: Sequence[int], floor: float, min_steps: int = 3) -> Callable[[CurveTrace], bool]:
    """Stop once any moving zero's last backward speed along mu falls below ``floor``."""
    mu = np.asarray(mu, dtype=float)

    def rule(tr: CurveTrace) -> bool:
        if len(tr.times) <= min_steps:
            return False
        a, b = tr.positions[-2], tr.positions[-1]
        v = (np.asarray(b) - np.asarray(a)) / (tr.times[-1] - tr.times[-2])
        moving = mu != 0
        return bool(np.any(mu[moving] * v[moving] < floor))

    return rule


def calibrate_M0(w1: GridFunction, mu, cfg: StrategyConfig, nl: Nonlinearity, theta: float) -> dict:
    """Pilot diffusion from w_1: 2 * (sup |xi'| + Hoelder quotient of xi' with exponent theta/2)."""
    rho = extract_pattern(w1, NOISE_REL * w1.sup()).min_gap() * cfg.rho_fraction
    dt = min(cfg.dt_diffuse, rho**2 / cfg.steps_per_rho2)
    res = track_during_solve(w1, (0.0, cfg.phase_max), nl, cfg=SolverConfig(dt_max=dt),
                             noise_rel=NOISE_REL, stop_rule=speed_stop_rule(mu, cfg.speed_floor))
    tr = res.trace
    if len(tr.times) < 3:
        raise StrategyFailure("pilot phase too short to calibrate M0*")
    v = tr.speeds()
    tm = 0.5 * (np.array(tr.times[1:]) + np.array(tr.times[:-1]))
    sup_v = float(np.max(np.abs(v)))
    dv = np.abs(v[:, None, :] - v[None, :, :]).max(axis=2)
    dtm = np.abs(tm[:, None] - tm[None, :])
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(dtm > 0, dv / dtm ** (theta / 2), 0.0)
    holder = float(np.max(q))
    return {"M0_star": 2 * (sup_v + holder), "pilot_sup_speed": sup_v,
            "pilot_holder": holder, "pilot_duration": tr.times[-1]}


def warp_to_zeros(u_star: GridFunction, targets: Sequence[float], zeros: Sequence[float]) -> GridFunction:
    """u_star composed with the piecewise-linear map sending ``zeros`` to ``targets``."""
    x = u_star.x
    phi = np.interp(x, (0.0, *zeros, 1.0), (0.0, *targets, 1.0))
    return GridFunction(u_star.grid, np.interp(phi, x, u_star.values)).with_dirichlet()


def _initial_speeds(tr: CurveTrace, steps: int = 12) -> tuple[float, ...]:
    """Speed at the phase start: slope at t0 of a least-squares quadratic over the first steps.

    Crank-Nicolson leaves an undamped alternating component in the per-step
    positions right after a steering phase; the fit averages it out.
    """
    m = min(steps, len(tr.times) - 1)
    if m < 1:
        return tuple(0.0 for _ in range(tr.n))
    t = np.array(tr.times[:m + 1]) - tr.times[0]
    p = tr.array()[:m + 1]
    deg = 2 if m >= 4 else 1
    return tuple(float(np.polyfit(t, p[:, l], deg)[-2]) for l in range(tr.n))


PROBE_STEPS = 12
SPEED_TOL = 0.08  # accepted deviation of the probed initial speed from that of w_k


def speed_probe(u: GridFunction, nl: Nonlinearity, dt: float) -> tuple[float, ...]:
    """Initial zero speeds of the free evolution from ``u``, from PROBE_STEPS steps of size dt.

    The diffusion phase that follows uses the same dt, so its first steps
    coincide with the probe.
    """
    res = track_during_solve(u, (0.0, PROBE_STEPS * dt), nl, cfg=SolverConfig(dt_max=dt),
                             noise_rel=NOISE_REL)
    return _initial_speeds(res.trace, PROBE_STEPS)


def run(u0: GridFunction, u_star: GridFunction, cfg: StrategyConfig, nl: Nonlinearity,
        log: Callable[[str], None] | None = None) -> tuple[GridFunction, RunTrace]:
    """Move the zeros of ``u0`` onto those of ``u_star``, then steer onto ``u_star``.

    Raises ``StrategyFailure`` carrying the partial trace when the round
    budget runs out, the tracker aborts, a steering phase cannot meet its
    tolerance or the final error exceeds eta.
    """
    grid = u0.grid
    h = grid.h
    p0 = extract_pattern(u0, NOISE_REL * u0.sup())
    ps = extract_pattern(u_star, NOISE_REL * u_star.sup())
    if p0.n != ps.n or p0.lam != ps.lam:
        raise PatternMismatch(
            f"initial state has {p0.n} sign changes (sign {p0.lam}), target has {ps.n} (sign {ps.lam})")
    n = p0.n
    if cfg.k_max < n + 1:
        raise ValueError(f"k_max={cfg.k_max} must be at least n+1={n + 1}")
    targets = ps.interior_zeros
    rho0 = min(p0.min_gap(), ps.min_gap())
    trace = RunTrace(n, targets)
    eps_eff = surrogate_epsilon(u_star, targets, cfg)
    reach = reach_tolerance(eps_eff, n)
    trace.constants.update({"rho0_star": rho0, "s_theta": s_theta(cfg.theta),
                            "epsilon_effective": eps_eff, "reach_tolerance": reach,
                            "h": h, "L": nl.lipschitz_L})
    say = log or (lambda msg: None)

    def fail(msg):
        trace.final.update({"status": "failed", "message": msg})
        return StrategyFailure(msg, trace)

    u = u0
    t = 0.0
    trace.add_row(t, "init", 0, p0.interior_zeros, l2_norm(u - u_star))
    inactive: set[int] = set()
    M0 = cfg.M0_star
    last_dur = 1e-2
    reports: list[SteeringReport] = []
    counts_seen = {n}
    pat = p0

    for k in range(1, cfg.k_max + 1):
        for l, (a, b) in enumerate(zip(pat.interior_zeros, targets)):
            if l not in inactive and abs(a - b) <= reach:
                inactive.add(l)
                trace.inactive_since[l] = k - 1
        J_now = target_distance(pat.interior_zeros, targets)
        # every zero within eps*/(2n) of its target implies J* <= eps*/2 < eps
        if len(inactive) == n:
            break
        mu = choose_directions(pat, ps, inactive)
        try:
            spec = build_round_profile(pat, mu, p0.lam, h, cfg.rho_fraction)
        except GridRefinementRequired as exc:
            raise fail(str(exc)) from exc
        w = build(spec, grid)
        if M0 is None:
            trace.constants.update(calibrate_M0(w, mu, cfg, nl, cfg.theta))
            M0 = trace.constants["M0_star"]
        trace.constants["M0_star"] = M0
        eta_rule = tolerance_budget(cfg, reports, nl.lipschitz_L, k)
        eta_k = max(eta_rule, cfg.floor)
        dt = min(cfg.dt_diffuse, spec.rho**2 / cfg.steps_per_rho2)
        # on coarse grids the discrete w_k itself drifts from mu; the steered
        # state has to move like w_k, so w_k's own probe is the reference
        probe = {"reference": speed_probe(w, nl, dt)}

        def accept(state, mu=mu, dt=dt):
            probe["speeds"] = speed_probe(state, nl, dt)
            return all(abs(v - r) <= SPEED_TOL
                       for v, r, m in zip(probe["speeds"], probe["reference"], mu) if m != 0)

        try:
            u, rep, _ = steer(u, w, eta_k, nl, t_initial=min(1e-2, 4 * last_dur),
                              t_min=cfg.t_min, t_start=t, accept=accept)
        except (SteeringFailure, PatternMismatch) as exc:
            raise fail(f"round {k}: steering to w_{k} failed: {exc}") from exc
        reports.append(rep)
        last_dur = rep.phase_durations[0]
        counts_seen.update(rep.sign_counts)
        rs = RoundState(k, pat, frozenset(inactive), mu, S_k=0.0, J_star=J_now, gap=pat.min_gap())
        t = t + sum(rep.phase_durations)
        rs.S_k = t
        r_k = l2_norm(u - w)
        pat_s = extract_pattern(u, NOISE_REL * u.sup())
        counts_seen.add(pat_s.n)
        if pat_s.n != n:
            raise fail(f"round {k}: steering changed the sign-change count to {pat_s.n}")
        trace.add_row(t, "steer", k, pat_s.interior_zeros, l2_norm(u - u_star))
        tau_tilde = schedule_tau(cfg, rho0, k, M0)
        tau_max = cfg.phase_max if cfg.schedule == "adaptive" else min(tau_tilde, cfg.phase_max)
        active = [l not in inactive for l in range(n)]
        try:
            res = track_during_solve(u, (t, t + tau_max), nl, targets=targets, active=active,
                                     cfg=SolverConfig(dt_max=dt), noise_rel=NOISE_REL,
                                     stop_rule=speed_stop_rule(mu, cfg.speed_floor))
        except TrackerAbort as exc:
            raise fail(f"round {k}: {exc}") from exc
        tr = res.trace
        for tt, z in zip(tr.times[1:], tr.positions[1:]):
            trace.add_row(tt, "diffuse", k, z, float("nan"))
        u = res.state
        # l2 error only at the phase end; interior rows carry nan to keep the loop cheap
        last = trace.rows[-1]
        trace.rows[-1] = (*last[:6], l2_norm(u - u_star))
        t = tr.times[-1]
        rs.T_k = t
        pat = SignPattern(tr.positions[-1], p0.lam)
        rec = RoundRecord(rs, spec, eta_k, rep, tau_tilde, t - rs.S_k, res.reason, res.event, r_k,
                          probe["speeds"], probe["reference"], pat.interior_zeros,
                          target_distance(pat.interior_zeros, targets), tr.min_gap())
        trace.rounds.append(rec)
        say(f"round {k}: J*={rec.J_end:.5f} tau={rec.tau:.3g} steer={last_dur:.3g} K={rep.K:.3g} "
            f"reason={res.reason}")
        if res.event is not None:
            inactive.add(res.event.index)
            trace.inactive_since[res.event.index] = k
    else:
        raise fail(f"round budget k_max={cfg.k_max} exhausted with J*={target_distance(pat.interior_zeros, targets):.4g}")

    return _finish(u, u_star, pat, targets, cfg, nl, t, trace, counts_seen, fail)


def _finish(u, u_star, pat, targets, cfg, nl, t, trace, counts_seen, fail):
    u_eps = warp_to_zeros(u_star, targets, pat.interior_zeros)
    dist = l2_norm(u_star - u_eps)
    trace.final["surrogate_distance"] = dist
    if dist > cfg.eta / 3:
        raise fail(f"zeros within tolerance but the target surrogate is {dist:.3g} > eta/3 from the target; "
                   "lower epsilon")
    try:
        u_fin, rep, _ = steer(u, u_eps, cfg.eta / 3, nl, t_min=cfg.t_min, t_start=t)
    except (SteeringFailure, PatternMismatch) as exc:
        raise fail(f"final steering failed: {exc}") from exc
    counts_seen.update(rep.sign_counts)
    t_end = t + sum(rep.phase_durations)
    p_fin = extract_pattern(u_fin, NOISE_REL * u_fin.sup())
    err = l2_norm(u_fin - u_star)
    trace.add_row(t_end, "final", len(trace.rounds) + 1, p_fin.interior_zeros, err)
    zero_err = max((abs(a - b) for a, b in zip(p_fin.interior_zeros, targets)), default=0.0)
    trace.final.update({
        "status": "ok" if err <= cfg.eta else "failed",
        "final_l2_error": err, "eta": cfg.eta, "final_time": t_end,
        "final_zeros": list(p_fin.interior_zeros), "max_zero_error": zero_err,
        "steering": rep.to_dict(), "rounds": len(trace.rounds),
        "sign_counts_seen": sorted(counts_seen),
    })
    if err > cfg.eta:
        raise fail(f"final L2 error {err:.4g} exceeds eta={cfg.eta}")
    return u_fin, trace


@dataclass(frozen=True)
class RunAudit:
    count_constant: bool
    gap_ok: bool
    inactive_monotone: bool
    inactive_drift: float
    inactive_drift_limit: float
    J_decreasing: bool
    speed_fidelity: float  # max over rounds and active zeros of |speed - mu|
    decay: DecayAudit

    @property
    def ok(self) -> bool:
        return (self.count_constant and self.gap_ok and self.inactive_monotone
                and self.inactive_drift <= self.inactive_drift_limit and self.J_decreasing)

    def to_dict(self) -> dict:
        d = {k: v for k, v in self.__dict__.items() if k != "decay"}
        d["decay"] = self.decay.to_dict()
        d["ok"] = self.ok
        return d


def audit(trace: RunTrace, cfg: StrategyConfig) -> RunAudit:
    """Whole-run checks on a completed trace."""
    n = trace.n
    rho0 = trace.constants["rho0_star"]
    h = trace.constants["h"]
    counts = trace.final.get("sign_counts_seen", [n])
    count_ok = counts == [n] and all(len(r[3]) == n for r in trace.rows)
    dec = decay_audit(trace, cfg, rho0)
    prev: frozenset = frozenset()
    monotone = True
    for r in trace.rounds:
        monotone &= r.state.inactive >= prev
        prev = r.state.inactive
    drift = 0.0
    for l, k0 in trace.inactive_since.items():
        for t, ph, k, z, *_ in trace.rows:
            if k > k0:
                drift = max(drift, abs(z[l] - trace.targets[l]))
    limit = cfg.epsilon * rho0 / 4 + 2 * h
    J_end = [r.J_end for r in trace.rounds]
    J_dec = all(b < a for a, b in zip(J_end, J_end[1:]))
    fid = 0.0
    for r in trace.rounds:
        for l, m in enumerate(r.state.mu):
            if m != 0:
                fid = max(fid, abs(r.initial_speeds[l] - m))
    return RunAudit(count_ok, dec.gap_ok, monotone, drift, limit, J_dec, fid, dec)
