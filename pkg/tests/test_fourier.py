import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kamtori.errors import ShapeError, SymmetryError
from kamtori.fourier import (
    FourierSeries,
    GridFunction,
    StripRadius,
    TorusDims,
    analytic_norm,
    average,
    derivative,
    derivative_norm_bound,
    evaluate,
    forward_transform,
    grid_nodes,
    grid_sup_norm,
    inverse_transform,
    read_coefficients,
    weights,
    write_coefficients,
)

from conftest import DIMS11, random_series

TWO_PI = 2 * math.pi


def cos_mode(k, amp=1.0, dims=DIMS11, trunc=4):
    return FourierSeries.from_modes(dims, trunc, {k: amp / 2})


# --- forward / inverse ------------------------------------------------------


def test_constant_grid_transforms_to_single_coefficient():
    g = GridFunction(DIMS11, np.full((16, 16), 3.5))
    s = forward_transform(g, 4)
    assert s.coeff((0, 0)) == pytest.approx(3.5, abs=1e-15)
    c = s.coeffs.copy()
    c[s.trunc] = 0
    assert np.max(np.abs(c)) < 1e-15


def test_cosine_grid():
    g = GridFunction.sample(DIMS11, 16, lambda x, p: np.cos(TWO_PI * x))
    s = forward_transform(g, 4)
    assert abs(s.coeff((1, 0)) - 0.5) < 1e-13
    assert abs(s.coeff((-1, 0)) - 0.5) < 1e-13
    c = s.coeffs.copy()
    c[4 + 1, 4] = c[4 - 1, 4] = 0
    assert np.max(np.abs(c)) < 1e-13


def test_round_trip_matches_direct_summation():
    rng = np.random.default_rng(1)
    s = random_series(rng, trunc=4)
    g = inverse_transform(s, 16)
    back = forward_transform(g, 4)
    assert np.max(np.abs(back.coeffs - s.coeffs)) < 1e-12
    nodes = grid_nodes((16, 16))
    for i in range(16):
        for j in range(16):
            x = (nodes[0][i, 0], nodes[1][0, j])
            assert abs(g.values[i, j] - evaluate(s, x)) < 1e-12


def test_shape_below_margin_rejected():
    g = GridFunction(DIMS11, np.zeros((8, 8)))
    with pytest.raises(ShapeError, match="8.*10"):
        forward_transform(g, 4)
    with pytest.raises(ShapeError):
        inverse_transform(FourierSeries.zeros(DIMS11, 4), 9)


def test_inverse_of_zero_and_single_mode():
    assert np.all(inverse_transform(FourierSeries.zeros(DIMS11, 3), 8).values == 0)
    g = inverse_transform(cos_mode((0, 1), trunc=3), 8)
    _, p = grid_nodes((8, 8))
    assert np.allclose(g.values, np.cos(TWO_PI * p) * np.ones((8, 1)), atol=1e-15)


# --- evaluate -----------------------------------------------------------------


def test_evaluate_trivial():
    assert evaluate(FourierSeries.zeros(DIMS11, 2), (0.3, 0.7)) == 0.0
    assert abs(evaluate(cos_mode((1, 0)), (0.25, 0.1))) < 1e-15


def test_evaluate_against_extended_precision():
    s = FourierSeries.from_modes(DIMS11, 3, {(1, 2): 0.3 - 0.2j, (2, -1): 0.7 + 0.1j})
    rng = np.random.default_rng(7)
    mpmath.mp.dps = 40
    for x in rng.random((7, 2)):
        ref = mpmath.mpf(0)
        for (k1, k2), a in {(1, 2): (0.3, -0.2), (2, -1): (0.7, 0.1)}.items():
            ph = 2 * mpmath.pi * (k1 * mpmath.mpf(x[0]) + k2 * mpmath.mpf(x[1]))
            ref += 2 * (a[0] * mpmath.cos(ph) - a[1] * mpmath.sin(ph))
        assert abs(evaluate(s, x) - float(ref)) < 1e-13


def test_evaluate_rejects_nonhermitian():
    s = FourierSeries.zeros(DIMS11, 1)
    c = s.coeffs.copy()
    c[2, 1] = 1.0
    with pytest.raises(SymmetryError):
        evaluate(FourierSeries(DIMS11, (1, 1), c), (0.1, 0.0))


# --- derivative, average --------------------------------------------------------


def test_derivative_of_cosine():
    d = derivative(cos_mode((1, 0)), 0)
    g = inverse_transform(d, 16)
    x, _ = grid_nodes((16, 16))
    assert np.allclose(g.values, -TWO_PI * np.sin(TWO_PI * x) * np.ones((1, 16)), atol=1e-13)
    assert np.all(derivative(FourierSeries.constant(DIMS11, 3, 2.0), 1).coeffs == 0)
    with pytest.raises(ShapeError):
        derivative(cos_mode((1, 0)), 2)


def test_derivative_against_finite_differences():
    rng = np.random.default_rng(3)
    s = random_series(rng, trunc=4, decay=0.5)
    h = 1e-5
    for axis in (0, 1):
        ds = derivative(s, axis)
        for x in rng.random((10, 2)):
            e = np.zeros(2)
            e[axis] = h
            fd = (evaluate(s, x + e) - evaluate(s, x - e)) / (2 * h)
            exact = evaluate(ds, x)
            assert abs(fd - exact) <= 1e-7 * max(1.0, abs(exact))


def test_average():
    assert average(FourierSeries.zeros(DIMS11, 2)) == 0
    assert average(cos_mode((1, 0))) == 0
    assert average(cos_mode((1, 0)) + 3.5) == 3.5


# --- norms --------------------------------------------------------------------


def test_analytic_norm_examples():
    assert analytic_norm(FourierSeries.zeros(DIMS11, 2), 0.3) == 0
    assert analytic_norm(cos_mode((1, 0)), 0.0) == pytest.approx(1.0, abs=1e-15)
    assert analytic_norm(cos_mode((1, 0)), 0.1) == pytest.approx(math.exp(0.2 * math.pi), rel=1e-14)
    assert math.exp(0.2 * math.pi) == pytest.approx(1.8745, abs=1e-4)


def test_grid_sup_norm():
    assert grid_sup_norm(GridFunction(DIMS11, np.zeros((4, 4)))) == 0
    g = GridFunction.sample(DIMS11, 16, lambda x, p: np.cos(TWO_PI * x) + 0 * p)
    assert grid_sup_norm(g) == pytest.approx(1.0, abs=1e-15)
    vals = np.random.default_rng(2).normal(size=(12, 10))
    best = 0.0
    for v in vals.ravel():
        best = max(best, abs(v))
    assert grid_sup_norm(GridFunction(DIMS11, vals)) == best


def test_strip_radius_positive():
    with pytest.raises(ValueError):
        StripRadius(0.0)


# --- properties -----------------------------------------------------------------

seeds = st.integers(0, 2**32 - 1)
truncs = st.integers(0, 5)
dims_st = st.sampled_from([TorusDims(1, 1), TorusDims(1, 2), TorusDims(2, 1)])


@settings(max_examples=40, deadline=None)
@given(seeds, truncs, dims_st, st.integers(0, 3))
def test_round_trip_property(seed, trunc, dims, extra):
    rng = np.random.default_rng(seed)
    s = random_series(rng, dims, trunc)
    shape = 2 * trunc + 2 + extra
    back = forward_transform(inverse_transform(s, shape), trunc)
    assert np.max(np.abs(back.coeffs - s.coeffs)) < 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds, truncs, dims_st)
def test_parseval_mean(seed, trunc, dims):
    s = random_series(np.random.default_rng(seed), dims, trunc)
    g = inverse_transform(s, 2 * trunc + 3)
    assert abs(g.values.mean() - average(s)) < 1e-12


@settings(max_examples=30, deadline=None)
@given(seeds, truncs)
def test_cross_derivatives_commute(seed, trunc):
    s = random_series(np.random.default_rng(seed), TorusDims(1, 2), trunc)
    a = derivative(derivative(s, 0), 2)
    b = derivative(derivative(s, 2), 0)
    # the two multiplication orders round differently, so equality holds to a few ulps
    assert np.allclose(a.coeffs, b.coeffs, rtol=1e-15, atol=0)


@settings(max_examples=40, deadline=None)
@given(seeds, truncs, dims_st)
def test_norm_dominates_grid_sup(seed, trunc, dims):
    s = random_series(np.random.default_rng(seed), dims, trunc)
    g = inverse_transform(s, 2 * trunc + 4)
    assert analytic_norm(s, 0.0) >= grid_sup_norm(g) - 1e-12


@settings(max_examples=40, deadline=None)
@given(seeds, truncs, st.floats(0.01, 0.5), st.floats(0.05, 1.0))
def test_cauchy_bound(seed, trunc, rho, frac):
    s = random_series(np.random.default_rng(seed), DIMS11, trunc)
    delta = rho * frac
    bound = derivative_norm_bound(s, rho, delta)
    for axis in (0, 1):
        exact = analytic_norm(derivative(s, axis), rho - delta)
        assert bound >= exact * (1 - 1e-12)


@settings(max_examples=30, deadline=None)
@given(seeds, truncs, st.floats(0, 0.3), st.floats(0, 0.3))
def test_norm_monotone_in_rho(seed, trunc, r1, r2):
    s = random_series(np.random.default_rng(seed), DIMS11, trunc)
    lo, hi = sorted((r1, r2))
    assert analytic_norm(s, lo) <= analytic_norm(s, hi)


def test_weights_convention():
    w = weights((2, 1), 0.1)
    assert w[2 + 2, 1 - 1] == pytest.approx(math.exp(TWO_PI * 3 * 0.1))


# --- coefficient files -------------------------------------------------------------


@settings(max_examples=20, deadline=None)
@given(seeds, truncs, dims_st)
def test_coefficient_file_bit_exact(tmp_path_factory, seed, trunc, dims):
    s = random_series(np.random.default_rng(seed), dims, trunc)
    c = s.coeffs.copy()
    c[s.trunc] = c[s.trunc].real
    s = FourierSeries(dims, s.trunc, c)
    p = tmp_path_factory.mktemp("coef") / "s.coef"
    write_coefficients(s, p)
    back = read_coefficients(p)
    assert back.dims == dims and back.trunc == s.trunc
    assert np.array_equal(back.coeffs, s.coeffs)


def test_coefficient_file_format(tmp_path):
    s = cos_mode((1, 0), trunc=1)
    p = tmp_path / "c.coef"
    write_coefficients(s, p)
    lines = p.read_text().splitlines()
    assert lines[0] == "dims 1 1"
    assert lines[1] == "trunc 1 1"
    assert "1 0 0.5 0.0" in lines
    assert not any(ln.startswith("-1 ") for ln in lines)


@pytest.mark.parametrize("body", ["", "dims 1 1\n", "dims 1 1\ntrunc 1 1\n0 0 1.0\n", "dims 1 1\ntrunc 1 1\n-1 0 1 0\n", "dims 1 1\ntrunc 1 1\n0 0 x 0\n"])
def test_corrupt_coefficient_file(tmp_path, body):
    p = tmp_path / "bad.coef"
    p.write_text(body)
    with pytest.raises(ValueError):
        read_coefficients(p)
