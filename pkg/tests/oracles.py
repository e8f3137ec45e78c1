"""Independent reference values and random inputs shared by the tests."""

import math

import numpy as np

from nodalsteer.grid import Grid, GridFunction


def zeta_three_halves_bracket(J=200_000):
    """Lower and upper bounds on sum j^-3/2 from a partial sum and integral tail bounds."""
    j = np.arange(1, J + 1, dtype=float)
    head = float(np.sum(j**-1.5))
    # int_{J+1}^inf x^-3/2 <= tail <= int_J^inf x^-3/2
    return head + 2 / math.sqrt(J + 1), head + 2 / math.sqrt(J)


def matched_pair(seed: int, grid: Grid, min_gap: float = 0.1):
    """Random smooth (u_in, u_bar) sharing zeros and orientation, plus the rng for residuals.

    u_in = lam sin(pi x) prod(z_l - x) e^{a(x)}, u_bar = u_in m(x) with m > 0.
    """
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 4))
    while True:
        z = np.sort(rng.uniform(0.1, 0.9, n))
        if np.min(np.diff([0.0, *z, 1.0])) > min_gap:
            break
    lam = int(rng.choice([-1, 1]))
    x = grid.x
    a = rng.uniform(-0.5, 0.5, 2)
    base = np.sin(np.pi * x) * np.prod(z[None, :] - x[:, None], axis=1) * np.exp(a[0] * np.sin(2 * np.pi * x + a[1]))
    base *= lam / np.max(np.abs(base))
    c = rng.uniform(0.2, 2.0, 3)
    mod = c[0] + c[1] * np.sin(np.pi * c[2] * x) ** 2
    u_in = GridFunction(grid, base).with_dirichlet()
    return u_in, GridFunction(grid, base * mod).with_dirichlet(), rng


def smooth_residual(rng, grid: Grid, norm: float, modes: int = 5):
    c = rng.standard_normal(modes) / np.arange(1, modes + 1)
    vals = sum(ck * np.sin((k + 1) * np.pi * grid.x) for k, ck in enumerate(c))
    f = GridFunction(grid, vals).with_dirichlet()
    from nodalsteer.grid import l2_norm
    return f * (norm / l2_norm(f))
