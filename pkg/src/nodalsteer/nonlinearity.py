"""Admissible reaction terms f with f(0) = 0 and a known Lipschitz constant."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

KINDS = ("zero", "linear", "saturating", "sinusoidal")

# integer codes shared with the compiled kernels
KIND_CODES = {name: code for code, name in enumerate(KINDS)}


class LipschitzViolation(ValueError):
    def __init__(self, ratio, pair, bound):
        super().__init__(f"|f(x)-f(y)|/|x-y| = {ratio:.6g} exceeds L = {bound:.6g} at pair {pair}")
        self.ratio = ratio
        self.pair = pair


@dataclass(frozen=True)
class Nonlinearity:
    """Reaction term.

    ``linear``: a*u, ``sinusoidal``: a*sin(u), ``saturating``: u/(1+u^2) (L = 1),
    ``zero``: 0.
    """

    kind: str = "zero"
    a: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown nonlinearity kind {self.kind!r}; expected one of {KINDS}")

    @property
    def code(self) -> int:
        return KIND_CODES[self.kind]

    @property
    def lipschitz_L(self) -> float:
        if self.kind == "zero":
            return 0.0
        if self.kind == "saturating":
            return 1.0
        return abs(float(self.a))

    def __call__(self, u):
        return evaluate(self, u)

    @classmethod
    def from_dict(cls, d: dict) -> "Nonlinearity":
        return cls(kind=d.get("kind", "zero"), a=float(d.get("a", 0.0)))

    def to_dict(self) -> dict:
        return {"kind": self.kind, "a": self.a, "L": self.lipschitz_L}


def evaluate(nl: Nonlinearity, u):
    u = np.asarray(u, dtype=float)
    if nl.kind == "zero":
        out = np.zeros_like(u)
    elif nl.kind == "linear":
        out = nl.a * u
    elif nl.kind == "saturating":
        out = u / (1.0 + u * u)
    else:
        out = nl.a * np.sin(u)
    return out if out.ndim else float(out)


def verify_lipschitz(nl: Nonlinearity, samples: int = 10_000, interval=(-10.0, 10.0)) -> float:
    """Largest difference quotient over adjacent pairs of an even sampling.

    For a piecewise C^1 function the sup over all pairs equals the sup over
    arbitrarily close pairs, so adjacent pairs of a fine sampling suffice.
    Raises ``LipschitzViolation`` if the quotient exceeds ``lipschitz_L``.
    """
    if samples < 2:
        raise ValueError("need at least two samples")
    xs = np.linspace(interval[0], interval[1], samples)
    fx = evaluate(nl, xs)
    dx = np.diff(xs)
    ratios = np.abs(np.diff(fx)) / dx
    i = int(np.argmax(ratios))
    ratio = float(ratios[i])
    # differencing values of size |f| over a step dx carries about eps |f| / dx of rounding
    eps = np.finfo(float).eps
    rounding = 4 * eps * (np.max(np.abs(fx)) + nl.lipschitz_L * np.max(np.abs(xs))) / np.min(dx)
    if ratio > nl.lipschitz_L * (1 + 1e-12) + rounding:
        raise LipschitzViolation(ratio, (float(xs[i]), float(xs[i + 1])), nl.lipschitz_L)
    return ratio
