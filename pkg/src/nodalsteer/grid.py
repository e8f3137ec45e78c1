"""Uniform grid on [0, 1], sampled functions, norms and finite differences."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

MIN_CELLS = 8


@dataclass(frozen=True)
class Grid:
    n_cells: int

    def __post_init__(self):
        if int(self.n_cells) != self.n_cells or self.n_cells < MIN_CELLS:
            raise ValueError(f"n_cells must be an integer >= {MIN_CELLS}, got {self.n_cells}")

    @property
    def h(self) -> float:
        return 1.0 / self.n_cells

    @property
    def n_nodes(self) -> int:
        return self.n_cells + 1

    @property
    def x(self) -> np.ndarray:
        return np.arange(self.n_nodes) * self.h

    def sample(self, func: Callable[[np.ndarray], np.ndarray], dirichlet: bool = False) -> "GridFunction":
        values = np.asarray(func(self.x), dtype=float) * np.ones(self.n_nodes)
        if dirichlet:
            values[0] = values[-1] = 0.0
        return GridFunction(self, values)

    def zeros(self) -> "GridFunction":
        return GridFunction(self, np.zeros(self.n_nodes))

    def constant(self, c: float) -> "GridFunction":
        return GridFunction(self, np.full(self.n_nodes, float(c)))


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Values sampled at the grid nodes.  The array is read-only."""

    grid: Grid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n_nodes,):
            raise ValueError(f"expected {self.grid.n_nodes} values, got shape {vals.shape}")
        vals.flags.writeable = False
        object.__setattr__(self, "values", vals)

    @property
    def x(self) -> np.ndarray:
        return self.grid.x

    def is_dirichlet(self) -> bool:
        return self.values[0] == 0.0 and self.values[-1] == 0.0

    def with_dirichlet(self) -> "GridFunction":
        vals = self.values.copy()
        vals[0] = vals[-1] = 0.0
        return GridFunction(self.grid, vals)

    def sup(self) -> float:
        return float(np.max(np.abs(self.values)))

    def _wrap(self, other):
        if isinstance(other, GridFunction):
            if other.grid != self.grid:
                raise ValueError("grid mismatch")
            return other.values
        return other

    def __add__(self, other):
        return GridFunction(self.grid, self.values + self._wrap(other))

    __radd__ = __add__

    def __sub__(self, other):
        return GridFunction(self.grid, self.values - self._wrap(other))

    def __rsub__(self, other):
        return GridFunction(self.grid, self._wrap(other) - self.values)

    def __mul__(self, other):
        return GridFunction(self.grid, self.values * self._wrap(other))

    __rmul__ = __mul__

    def __neg__(self):
        return GridFunction(self.grid, -self.values)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["x", "value"])
        for xi, vi in zip(self.x, self.values):
            writer.writerow([f"{xi:.17g}", f"{vi:.17g}"])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "GridFunction":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or rows[0] != ["x", "value"]:
            raise ValueError("missing x,value header")
        values = [float(r[1]) for r in rows[1:] if r]
        return cls(Grid(len(values) - 1), np.array(values))


def l2_norm(f: GridFunction) -> float:
    """Trapezoidal approximation of the L2(0, 1) norm."""
    v2 = f.values**2
    integral = f.grid.h * (v2.sum() - 0.5 * (v2[0] + v2[-1]))
    return float(np.sqrt(integral))


def h1_seminorm(f: GridFunction) -> float:
    d = np.diff(f.values) / f.grid.h
    return float(np.sqrt(np.sum(d**2) * f.grid.h))


def _check_interior(f: GridFunction, i: int):
    if not 1 <= i <= f.grid.n_cells - 1:
        raise IndexError(f"node {i} is not interior (1..{f.grid.n_cells - 1})")


def second_difference(f: GridFunction, i: int) -> float:
    _check_interior(f, i)
    v, h = f.values, f.grid.h
    return float((v[i - 1] - 2.0 * v[i] + v[i + 1]) / h**2)


def central_difference(f: GridFunction, i: int) -> float:
    _check_interior(f, i)
    v, h = f.values, f.grid.h
    return float((v[i + 1] - v[i - 1]) / (2.0 * h))


def second_differences(f: GridFunction) -> np.ndarray:
    """Second differences at all interior nodes (length n_cells - 1)."""
    v = f.values
    return (v[:-2] - 2.0 * v[1:-1] + v[2:]) / f.grid.h**2


def central_differences(f: GridFunction) -> np.ndarray:
    v = f.values
    return (v[2:] - v[:-2]) / (2.0 * f.grid.h)


def nearest_node(grid: Grid, x: float) -> int:
    return int(round(x / grid.h))
