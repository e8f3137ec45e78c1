"""Smooth profiles with prescribed zeros, unit slopes, chosen curvatures and +-1 plateaus.

Near each zero x_l the profile is the quadratic
``alpha_l (x - x_l) + beta_l/2 (x - x_l)^2``; between zeros it is the constant
``alpha_l``; the two are glued with the exponential cutoff below, which is 1
on [0, rho/2], 0 beyond rho and C-infinity in between.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid import Grid, GridFunction, central_differences, second_differences


def _logistic(z):
    """1 / (1 + exp(-z)) without overflow."""
    z = np.asarray(z, dtype=float)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def cutoff_pair(x, rho: float):
    """Return ``(eta, 1 - eta)`` for the cutoff of radius ``rho``.

    On rho/2 < |x| < rho, with s = |x|/rho,
    eta = e^{a} / (e^{a} + e^{b}), a = 1/((s-1)(s-1/2)), b = -1/(s-1/2)^2.
    The complement is returned separately because eta rounds to 1.0 in
    double precision well before s reaches 1/2.
    """
    if rho <= 0:
        raise ValueError("rho must be positive")
    s = np.abs(np.asarray(x, dtype=float)) / rho
    eta = np.where(s <= 0.5, 1.0, 0.0)
    comp = 1.0 - eta
    mid = (s > 0.5) & (s < 1.0)
    if np.any(mid):
        sm = s[mid] if s.ndim else s
        a = 1.0 / ((sm - 1.0) * (sm - 0.5))
        b = -1.0 / (sm - 0.5) ** 2
        e_mid = _logistic(np.atleast_1d(a - b))
        c_mid = _logistic(np.atleast_1d(b - a))
        if s.ndim:
            eta[mid] = e_mid
            comp[mid] = c_mid
        else:
            eta, comp = e_mid[0], c_mid[0]
    if np.ndim(eta) == 0:
        return float(eta), float(comp)
    return eta, comp


def mollifier(x, rho: float):
    """Even cutoff: 1 on [0, rho/2], 0 on [rho, inf), smooth in between."""
    return cutoff_pair(x, rho)[0]


@dataclass(frozen=True)
class ProfileSpec:
    """Zeros ``0 = x_0 < ... < x_{n+1} = 1`` with slopes and curvatures at each."""

    zeros: tuple[float, ...]
    alphas: tuple[int, ...]
    betas: tuple[float, ...]
    rho: float

    def __post_init__(self):
        z = tuple(float(v) for v in self.zeros)
        object.__setattr__(self, "zeros", z)
        object.__setattr__(self, "alphas", tuple(int(a) for a in self.alphas))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if len(z) < 2 or z[0] != 0.0 or z[-1] != 1.0:
            raise ValueError("zeros must start at 0 and end at 1")
        if any(b <= a for a, b in zip(z, z[1:])):
            raise ValueError("zeros must be strictly increasing")
        if len(self.alphas) != len(z) or len(self.betas) != len(z):
            raise ValueError("need one slope and one curvature per zero (endpoints included)")
        if any(a not in (-1, 1) for a in self.alphas):
            raise ValueError("slopes must be +1 or -1")
        if any(a * b >= 0 for a, b in zip(self.alphas, self.alphas[1:])):
            raise ValueError("slopes must alternate in sign")
        if any(b not in (-1.0, 0.0, 1.0) for b in self.betas):
            raise ValueError("curvatures must be -1, 0 or 1")
        if self.betas[0] != 0.0 or self.betas[-1] != 0.0:
            raise ValueError("curvature must vanish at x = 0 and x = 1")
        if not 0 < self.rho <= self.min_gap / 2 * (1 + 1e-12):
            raise ValueError(f"rho={self.rho} must lie in (0, min gap / 2 = {self.min_gap / 2}]")

    @property
    def n_interior(self) -> int:
        return len(self.zeros) - 2

    @property
    def interior_zeros(self) -> tuple[float, ...]:
        return self.zeros[1:-1]

    @property
    def min_gap(self) -> float:
        return float(np.min(np.diff(self.zeros)))

    @classmethod
    def from_zeros(cls, interior, lam: int = 1, betas=None, rho=None) -> "ProfileSpec":
        """Alternating unit slopes starting with sign ``lam`` on (0, x_1)."""
        zeros = (0.0, *map(float, interior), 1.0)
        alphas = tuple(lam * (-1) ** l for l in range(len(zeros)))
        if betas is None:
            betas = (0.0,) * len(zeros)
        elif len(betas) == len(zeros) - 2:
            betas = (0.0, *betas, 0.0)
        if rho is None:
            rho = float(np.min(np.diff(zeros))) / 4
        return cls(zeros, alphas, tuple(betas), rho)

    def to_dict(self) -> dict:
        return {"zeros": list(self.zeros), "alphas": list(self.alphas),
                "betas": list(self.betas), "rho": self.rho}

    @classmethod
    def from_dict(cls, d: dict) -> "ProfileSpec":
        zeros = list(d["zeros"])
        if zeros[0] != 0.0 or zeros[-1] != 1.0:
            # interior zeros only
            return cls.from_zeros(zeros, d.get("lambda", 1), d.get("betas"), d.get("rho"))
        lam = d.get("lambda", 1)
        alphas = d.get("alphas") or [lam * (-1) ** l for l in range(len(zeros))]
        betas = d.get("betas") or [0.0] * len(zeros)
        rho = d.get("rho") or float(np.min(np.diff(zeros))) / 4
        return cls(tuple(zeros), tuple(alphas), tuple(betas), rho)


def build(spec: ProfileSpec, grid: Grid) -> GridFunction:
    if grid.h > spec.rho / 8 * (1 + 1e-12):
        raise ValueError(f"grid too coarse: h={grid.h:.4g} > rho/8={spec.rho / 8:.4g}")
    return GridFunction(grid, evaluate(spec, grid.x))


def evaluate(spec: ProfileSpec, x) -> np.ndarray:
    """The profile at arbitrary points of [0, 1]."""
    x = np.asarray(x, dtype=float)
    z = np.array(spec.zeros)
    al = np.array(spec.alphas, dtype=float)
    be = np.array(spec.betas)
    # interval index l with z[l] <= x < z[l+1]; x = 1 belongs to the last interval
    l = np.clip(np.searchsorted(z, x, side="right") - 1, 0, len(z) - 2)
    dl = x - z[l]
    dr = x - z[l + 1]
    eta_l, comp_l = cutoff_pair(dl, spec.rho)
    eta_r, comp_r = cutoff_pair(dr, spec.rho)
    vl = al[l] * dl + 0.5 * be[l] * dl**2
    vr = al[l + 1] * dr + 0.5 * be[l + 1] * dr**2
    # the two cutoffs never overlap inside an interval when rho <= gap/2
    rest = np.where(eta_r == 0.0, comp_l, comp_r)
    return eta_l * vl + eta_r * vr + al[l] * rest


@dataclass(frozen=True)
class ProfileBounds:
    sup: float
    sup_d1: float
    sup_d2: float


def uniform_bound_check(spec: ProfileSpec, grid: Grid) -> ProfileBounds:
    """Discrete sup norms of w, w' and w'' over the grid."""
    w = build(spec, grid)
    return ProfileBounds(
        sup=w.sup(),
        sup_d1=float(np.max(np.abs(central_differences(w)))),
        sup_d2=float(np.max(np.abs(second_differences(w)))),
    )
