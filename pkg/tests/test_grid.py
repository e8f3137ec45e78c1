import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from nodalsteer.grid import (Grid, GridFunction, central_difference, central_differences,
                             h1_seminorm, l2_norm, second_difference, second_differences)


def test_grid_invariants():
    g = Grid(400)
    assert abs(g.h * g.n_cells - 1) < 1e-15
    assert g.n_nodes == 401 and g.x[0] == 0.0 and g.x[-1] == 1.0
    with pytest.raises(ValueError):
        Grid(7)
    with pytest.raises(ValueError):
        GridFunction(g, np.zeros(400))


def test_values_are_read_only(grid400):
    f = grid400.zeros()
    with pytest.raises(ValueError):
        f.values[3] = 1.0


def test_l2_examples(grid400):
    assert l2_norm(grid400.zeros()) == 0.0
    assert abs(l2_norm(grid400.sample(lambda x: np.sin(np.pi * x))) - 1 / math.sqrt(2)) < 1e-4
    assert abs(l2_norm(grid400.constant(1.0)) - 1.0) < 1e-12


def test_h1_examples(grid400):
    assert h1_seminorm(grid400.zeros()) == 0.0
    assert abs(h1_seminorm(grid400.sample(lambda x: x)) - 1.0) < 1e-12
    assert abs(h1_seminorm(grid400.sample(lambda x: np.sin(np.pi * x))) - math.pi / math.sqrt(2)) < 1e-2


def test_difference_examples(grid400):
    sq = grid400.sample(lambda x: x**2)
    lin = grid400.sample(lambda x: 3 * x - 1)
    for i in (1, 57, 200, 399):
        assert abs(second_difference(sq, i) - 2.0) < 1e-8
        assert abs(second_difference(lin, i)) < 1e-10
    s = grid400.sample(lambda x: np.sin(np.pi * x))
    assert abs(second_difference(s, 200) + math.pi**2) < 1e-2
    assert central_difference(grid400.sample(lambda x: x), 10) == pytest.approx(1.0, abs=1e-12)
    assert central_difference(grid400.constant(2.5), 10) == 0.0
    s2 = grid400.sample(lambda x: np.sin(2 * np.pi * x))
    assert abs(central_difference(s2, 200) + 2 * math.pi) < 1e-2


def test_difference_index_range(grid400):
    f = grid400.zeros()
    for i in (0, 400, -1):
        with pytest.raises(IndexError):
            second_difference(f, i)
        with pytest.raises(IndexError):
            central_difference(f, i)


def test_vector_differences_agree_with_scalar(grid400, rng):
    f = GridFunction(grid400, rng.standard_normal(401))
    d2 = second_differences(f)
    d1 = central_differences(f)
    for i in (1, 123, 399):
        assert d2[i - 1] == second_difference(f, i)
        assert d1[i - 1] == central_difference(f, i)


def test_l2_order_two():
    # int_0^1 e^{2x} sin^2(3x) dx by hand: (e^2-1)/4 - (e^2 (2 cos 6 + 6 sin 6) - 2)/80
    exact = (math.e**2 - 1) / 4 - (math.e**2 * (2 * math.cos(6) + 6 * math.sin(6)) - 2) / 80
    errs, hs = [], []
    for n in (50, 100, 200):
        g = Grid(n)
        errs.append(abs(l2_norm(g.sample(lambda x: np.exp(x) * np.sin(3 * x))) ** 2 - exact))
        hs.append(g.h)
    rate = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    assert rate >= 1.9


def test_csv_round_trip(grid400, rng):
    f = GridFunction(grid400, rng.standard_normal(401))
    g = GridFunction.from_csv(f.to_csv())
    assert g.grid == f.grid and np.array_equal(g.values, f.values)


vals = arrays(np.float64, 33, elements=st.floats(-1e3, 1e3))


@given(vals, vals)
def test_triangle_inequality(a, b):
    g = Grid(32)
    fa, fb = GridFunction(g, a), GridFunction(g, b)
    assert l2_norm(fa + fb) <= l2_norm(fa) + l2_norm(fb) + 1e-9 * (1 + l2_norm(fa) + l2_norm(fb))


@given(vals, st.floats(-100, 100))
def test_homogeneity(a, c):
    g = Grid(32)
    f = GridFunction(g, a)
    assert l2_norm(c * f) == pytest.approx(abs(c) * l2_norm(f), rel=1e-12, abs=1e-12)


@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(-5, 5))
def test_differences_exact_on_quadratics(a, b, c):
    g = Grid(16)
    f = g.sample(lambda x: a * x**2 + b * x + c)
    scale = 1 + abs(a) + abs(b) + abs(c)
    assert np.allclose(second_differences(f), 2 * a, atol=1e-9 * scale / g.h**2)
    lin = g.sample(lambda x: b * x + c)
    assert np.allclose(central_differences(lin), b, atol=1e-9 * scale / g.h)
