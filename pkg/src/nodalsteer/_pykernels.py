"""Pure-Python Crank-Nicolson kernel; mirrors ``_kernels.pyx`` line for line."""

import math

import numpy as np

from .errors import TridiagonalError


def _f(kind, a, u):
    if kind == 0:
        return 0.0
    if kind == 1:
        return a * u
    if kind == 2:
        return u / (1.0 + u * u)
    return a * math.sin(u)


def cn_advance(u, v, dt, h, nsteps, kind, a, picard_iters):
    """Advance ``nsteps`` Crank-Nicolson steps of u_t = u_xx + v u + f(u).

    Diffusion and the bilinear term sit in the implicit operator; f enters
    through ``picard_iters`` fixed-point sweeps of the trapezoidal rule.
    Boundary values are held at zero.
    """
    uu = [float(x) for x in u]
    vv = [float(x) for x in v]
    n = len(uu) - 1
    r = dt / (2.0 * h * h)
    half = 0.5 * dt
    for i in range(1, n):
        if 1.0 - half * vv[i] <= 0.0:
            raise TridiagonalError(dt, max(vv), i)
    # forward-elimination factors, fixed for the whole call
    cp = [0.0] * (n + 1)
    inv = [0.0] * (n + 1)
    prev = 0.0
    for i in range(1, n):
        m = 1.0 + 2.0 * r - half * vv[i] + r * prev
        if m <= 0.0:
            raise TridiagonalError(dt, max(vv), i)
        inv[i] = 1.0 / m
        cp[i] = -r * inv[i]
        prev = cp[i]
    sweeps = 1 if kind == 0 else picard_iters
    uu[0] = uu[n] = 0.0
    base = [0.0] * (n + 1)
    fold = [0.0] * (n + 1)
    guess = list(uu)
    dp = [0.0] * (n + 1)
    for _ in range(nsteps):
        for i in range(1, n):
            base[i] = uu[i] + r * (uu[i - 1] - 2.0 * uu[i] + uu[i + 1]) + half * vv[i] * uu[i]
            fold[i] = _f(kind, a, uu[i])
        guess[:] = uu
        for _ in range(sweeps):
            prev = 0.0
            for i in range(1, n):
                rhs = base[i] + half * (fold[i] + _f(kind, a, guess[i]))
                prev = (rhs + r * prev) * inv[i]
                dp[i] = prev
            guess[n - 1] = dp[n - 1]
            for i in range(n - 2, 0, -1):
                guess[i] = dp[i] - cp[i] * guess[i + 1]
            guess[0] = guess[n] = 0.0
        uu, guess = guess, uu
    return np.array(uu)
