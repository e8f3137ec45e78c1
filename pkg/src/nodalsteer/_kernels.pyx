# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Crank-Nicolson kernel; same algorithm as ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin

from .errors import TridiagonalError

cnp.import_array()


cdef inline double _f(int kind, double a, double u) nogil:
    if kind == 0:
        return 0.0
    if kind == 1:
        return a * u
    if kind == 2:
        return u / (1.0 + u * u)
    return a * sin(u)


def cn_advance(u, v, double dt, double h, int nsteps, int kind, double a, int picard_iters):
    cdef cnp.ndarray[double, ndim=1] uarr = np.array(u, dtype=np.float64)
    varr = np.ascontiguousarray(v, dtype=np.float64)
    cdef Py_ssize_t n = uarr.shape[0] - 1
    cdef double[::1] uu = uarr
    cdef const double[::1] vv = varr
    cdef double[::1] guess = np.empty(n + 1)
    cdef double[::1] cp = np.zeros(n + 1)
    cdef double[::1] inv = np.zeros(n + 1)
    cdef double[::1] base = np.zeros(n + 1)
    cdef double[::1] fold = np.zeros(n + 1)
    cdef double[::1] dp = np.zeros(n + 1)
    cdef double[::1] tmp
    cdef double r = dt / (2.0 * h * h)
    cdef double half = 0.5 * dt
    cdef double prev, m, rhs
    cdef Py_ssize_t i
    cdef int step, sweep, sweeps

    for i in range(1, n):
        if 1.0 - half * vv[i] <= 0.0:
            raise TridiagonalError(dt, float(varr.max()), i)
    prev = 0.0
    for i in range(1, n):
        m = 1.0 + 2.0 * r - half * vv[i] + r * prev
        if m <= 0.0:
            raise TridiagonalError(dt, float(varr.max()), i)
        inv[i] = 1.0 / m
        cp[i] = -r * inv[i]
        prev = cp[i]
    sweeps = 1 if kind == 0 else picard_iters
    uu[0] = 0.0
    uu[n] = 0.0
    with nogil:
        for step in range(nsteps):
            for i in range(1, n):
                base[i] = uu[i] + r * (uu[i - 1] - 2.0 * uu[i] + uu[i + 1]) + half * vv[i] * uu[i]
                fold[i] = _f(kind, a, uu[i])
            guess[:] = uu
            for sweep in range(sweeps):
                prev = 0.0
                for i in range(1, n):
                    rhs = base[i] + half * (fold[i] + _f(kind, a, guess[i]))
                    prev = (rhs + r * prev) * inv[i]
                    dp[i] = prev
                guess[n - 1] = dp[n - 1]
                for i in range(n - 2, 0, -1):
                    guess[i] = dp[i] - cp[i] * guess[i + 1]
                guess[0] = 0.0
                guess[n] = 0.0
            tmp = uu
            uu = guess
            guess = tmp
    return np.asarray(uu).copy()
