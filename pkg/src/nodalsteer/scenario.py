"""TOML scenario files: loading, validation and the field specifications they contain.

A scenario names a grid, a reaction term, an initial state and a target,
each state given either as a built-in fixture or as a profile
specification::

    name = "one-zero"
    [grid]
    n_cells = 400
    [nonlinearity]
    kind = "zero"
    [initial]
    fixture = "sin-k"
    k = 2
    [target]
    zeros = [0.6]
    lambda = 1
    [strategy]
    epsilon = 0.01
    eta = 0.05

Anything wrong with the file raises ``ConfigError``; the command line maps
that to exit status 2.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .fixtures import FIXTURES, sample_fixture
from .grid import Grid, GridFunction, l2_norm
from .nonlinearity import Nonlinearity
from .profiles import ProfileSpec, build
from .strategy import StrategyConfig
from .tracker import extract_pattern

SECTIONS = {"name", "grid", "nonlinearity", "initial", "target", "strategy", "steer",
            "diffuse", "track", "profile", "sweep", "output_dir", "seed"}
PERTURB_MODES = 8


class ConfigError(ValueError):
    """The scenario file cannot be parsed or violates a hypothesis of the method."""


def _fail(msg: str):
    raise ConfigError(msg)


def profile_from_dict(d: dict) -> ProfileSpec:
    try:
        return ProfileSpec.from_dict(d)
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid profile {d!r}: {exc}") from exc


def profile_to_toml(spec: ProfileSpec) -> str:
    d = spec.to_dict()
    d["alphas"] = [int(a) for a in d["alphas"]]
    return tomli_w.dumps({"profile": d})


def profile_from_toml(text: str) -> ProfileSpec:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse profile TOML: {exc}") from exc
    if "profile" not in data:
        _fail("profile TOML needs a [profile] table")
    return profile_from_dict(data["profile"])


def smooth_perturbation(grid: Grid, norm: float, seed: int) -> GridFunction:
    """Random combination of the first sine modes scaled to the given L2 norm."""
    rng = np.random.default_rng(seed)
    coef = rng.standard_normal(PERTURB_MODES) / np.arange(1, PERTURB_MODES + 1)
    vals = sum(c * np.sin((j + 1) * np.pi * grid.x) for j, c in enumerate(coef))
    p = GridFunction(grid, vals).with_dirichlet()
    return p * (norm / l2_norm(p))


@dataclass
class FieldSpec:
    """A state given by fixture name or by profile, with an optional seeded perturbation."""

    fixture: str | None = None
    params: dict = field(default_factory=dict)
    profile: ProfileSpec | None = None
    perturb: float = 0.0

    @classmethod
    def from_dict(cls, d: dict, where: str) -> "FieldSpec":
        if not isinstance(d, dict):
            _fail(f"[{where}] must be a table")
        d = dict(d)
        perturb = float(d.pop("perturb", 0.0))
        if perturb < 0:
            _fail(f"[{where}] perturb must be nonnegative")
        if "fixture" in d:
            name = d.pop("fixture")
            if name not in FIXTURES:
                _fail(f"[{where}] unknown fixture {name!r}; known: {', '.join(FIXTURES)}")
            return cls(fixture=name, params=d, perturb=perturb)
        if "zeros" in d:
            return cls(profile=profile_from_dict(d), perturb=perturb)
        _fail(f"[{where}] needs either 'fixture' or 'zeros'")

    def unperturbed(self) -> "FieldSpec":
        return FieldSpec(self.fixture, dict(self.params), self.profile, 0.0)

    def sample(self, grid: Grid, seed: int = 0) -> GridFunction:
        try:
            f = (sample_fixture(self.fixture, grid, **self.params) if self.fixture
                 else build(self.profile, grid))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if self.perturb:
            f = f + smooth_perturbation(grid, self.perturb, seed)
        return f


@dataclass
class Scenario:
    name: str
    grid: Grid
    nonlinearity: Nonlinearity
    initial: FieldSpec | None
    target: FieldSpec | None
    strategy: StrategyConfig
    seed: int = 0
    output_dir: str | None = None
    raw: dict = field(default_factory=dict)

    def initial_state(self) -> GridFunction:
        if self.initial is None:
            _fail("scenario has no [initial] section")
        return self.initial.sample(self.grid, self.seed)

    def target_state(self) -> GridFunction:
        if self.target is None:
            _fail("scenario has no [target] section")
        return self.target.sample(self.grid, self.seed + 1)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))


def set_dotted(d: dict, key: str, value: Any) -> dict:
    """Return a deep copy of ``d`` with ``a.b.c = value``."""
    out = copy.deepcopy(d)
    node = out
    parts = key.split(".")
    for p in parts[:-1]:
        node = node.setdefault(p, {})
        if not isinstance(node, dict):
            _fail(f"override {key!r} walks into a non-table")
    node[parts[-1]] = value
    return out


def load_text(text: str, seed: int | None = None, overrides: dict | None = None) -> Scenario:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"cannot parse scenario TOML: {exc}") from exc
    for key, value in (overrides or {}).items():
        raw = set_dotted(raw, key, value)
    return from_dict(raw, seed)


def load(path: str | Path, seed: int | None = None, overrides: dict | None = None) -> Scenario:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return load_text(text, seed, overrides)


def from_dict(raw: dict, seed: int | None = None) -> Scenario:
    unknown = set(raw) - SECTIONS
    if unknown:
        _fail(f"unknown top-level keys: {sorted(unknown)}")
    g = raw.get("grid", {})
    if "n_cells" not in g:
        _fail("[grid] n_cells is required")
    try:
        grid = Grid(int(g["n_cells"]))
        nl = Nonlinearity.from_dict(raw.get("nonlinearity", {}))
        strat = StrategyConfig.from_dict(raw.get("strategy", {}))
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
    initial = FieldSpec.from_dict(raw["initial"], "initial") if "initial" in raw else None
    target = FieldSpec.from_dict(raw["target"], "target") if "target" in raw else None
    sc = Scenario(str(raw.get("name", "scenario")), grid, nl, initial, target, strat,
                  int(raw.get("seed", 0) if seed is None else seed), raw.get("output_dir"), raw)
    if initial is not None and target is not None:
        check_hypothesis(sc.initial_state(), sc.target_state())
    return sc


def check_hypothesis(u0: GridFunction, u_star: GridFunction):
    """Same number of sign changes in the same order, else ConfigError."""
    try:
        p0 = extract_pattern(u0, 1e-9 * u0.sup())
        ps = extract_pattern(u_star, 1e-9 * u_star.sup())
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    if p0.n != ps.n:
        _fail(f"initial state and target must have the same number of sign changes in the same "
              f"order: {p0.n} vs {ps.n}")
    if p0.lam != ps.lam:
        _fail("initial state and target must have the same number of sign changes in the same "
              "order: signs on the first interval differ")
