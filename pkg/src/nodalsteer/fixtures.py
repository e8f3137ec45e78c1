"""Built-in initial data and closed-form oracles, so scenarios need no external files."""

from __future__ import annotations

import math

import numpy as np

from .grid import Grid, GridFunction
from .profiles import ProfileSpec, build


def two_mode(x, t: float = 0.0):
    """e^{-pi^2 t} sin(pi x) + e^{-4 pi^2 t} sin(2 pi x), the free evolution of sin(pi x) + sin(2 pi x)."""
    x = np.asarray(x, dtype=float)
    return np.exp(-np.pi**2 * t) * np.sin(np.pi * x) + np.exp(-4 * np.pi**2 * t) * np.sin(2 * np.pi * x)


def two_mode_zero(t):
    """Interior zero of ``two_mode``: cos(pi xi) = -e^{3 pi^2 t}/2, valid while e^{3 pi^2 t} < 2."""
    c = -np.exp(3 * np.pi**2 * np.asarray(t, dtype=float)) / 2
    if np.any(c <= -1):
        raise ValueError("the zero has reached the boundary")
    return np.arccos(c) / np.pi


def two_mode_speed(t):
    """Time derivative of ``two_mode_zero``."""
    t = np.asarray(t, dtype=float)
    xi = two_mode_zero(t)
    return (3 * np.pi**2 / 2) * np.exp(3 * np.pi**2 * t) / (np.pi * np.sin(np.pi * xi))


def two_mode_exit_time() -> float:
    """Time at which the zero reaches x = 1."""
    return math.log(2.0) / (3 * np.pi**2)


def two_mode_hit_time(target: float) -> float:
    """First time the zero reaches ``target`` in (2/3, 1)."""
    return math.log(-2 * math.cos(math.pi * target)) / (3 * math.pi**2)


def sin_k(x, k: int = 2):
    return np.sin(k * np.pi * np.asarray(x, dtype=float))


def figure1_specs() -> tuple[ProfileSpec, ProfileSpec]:
    """Initial zeros (0.3, 0.7) and targets (0.4, 0.6), both positive on the first interval."""
    return ProfileSpec.from_zeros([0.3, 0.7]), ProfileSpec.from_zeros([0.4, 0.6])


FIXTURES = ("two-mode", "sin-k", "figure1-two-zeros", "figure1-two-zeros-target")


def sample_fixture(name: str, grid: Grid, **params) -> GridFunction:
    """Sample a named fixture with homogeneous Dirichlet values."""
    if name == "two-mode":
        return grid.sample(lambda x: two_mode(x, 0.0), dirichlet=True)
    if name == "sin-k":
        k = int(params.get("k", 2))
        if k < 1:
            raise ValueError("sin-k needs k >= 1")
        return grid.sample(lambda x: sin_k(x, k), dirichlet=True)
    if name == "figure1-two-zeros":
        return build(figure1_specs()[0], grid)
    if name == "figure1-two-zeros-target":
        return build(figure1_specs()[1], grid)
    raise KeyError(f"unknown fixture {name!r}; known: {', '.join(FIXTURES)}")
