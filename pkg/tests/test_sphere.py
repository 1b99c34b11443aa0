import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from boundary_singular.errors import InvalidGridError
from boundary_singular.sphere import (
    AxisymGrid,
    ExponentParams,
    SphericalProfile,
    constants,
    laplace_beltrami_axisym,
    phi1,
    project_perp,
    quad_halfsphere,
)


@pytest.mark.parametrize("N, measure", [(2, math.pi), (3, 2 * math.pi)])
def test_quad_of_one_is_half_sphere_measure(N, measure):
    g = AxisymGrid(N, 401)
    assert_allclose(quad_halfsphere(g.profile(np.ones(g.n))), measure, atol=1e-10)
    assert np.all(np.diff(g.alpha) > 0)
    assert np.all(g.weights >= 0)


@pytest.mark.parametrize("N, expected", [(2, math.pi / 2), (3, 2 * math.pi / 3)])
def test_quad_cos_squared(N, expected):
    g = AxisymGrid(N, 400)
    assert_allclose(g.quad(g.cos**2), expected, atol=1e-8)


@pytest.mark.parametrize("N", [2, 3])
@pytest.mark.parametrize("k", [1, 2, 3, 4])
def test_quad_exact_for_cos_powers(N, k):
    g = AxisymGrid(N, 400)
    # int_0^{pi/2} cos^k sin^{N-2} times the measure of S^{N-2}
    if N == 2:
        exact = 2 * math.gamma((k + 1) / 2) * math.sqrt(math.pi) / (2 * math.gamma(k / 2 + 1))
    else:
        exact = 2 * math.pi / (k + 1)
    assert_allclose(g.quad(g.cos**k), exact, atol=1e-8)


def test_grid_too_small():
    with pytest.raises(InvalidGridError):
        AxisymGrid(2, 3)


@pytest.mark.parametrize("N", [2, 3])
def test_cos_is_eigenfunction_second_order(N):
    errs = []
    for n in (101, 201, 401):
        g = AxisymGrid(N, n)
        f = laplace_beltrami_axisym(g.profile(g.cos))
        errs.append(np.max(np.abs(f.values + (N - 1) * g.cos)))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert_allclose(rates, 2.0, atol=0.1)


def test_constants_are_harmonic():
    g = AxisymGrid(3, 101)
    assert_allclose(laplace_beltrami_axisym(g.profile(np.ones(g.n))).values, 0.0, atol=1e-10)


def test_cos3_on_circle():
    g = AxisymGrid(2, 801)
    f = laplace_beltrami_axisym(g.profile(np.cos(3 * g.alpha)))
    assert_allclose(f.values, -9 * np.cos(3 * g.alpha), atol=1e-4)


@pytest.mark.parametrize("N, norm2", [(2, math.pi / 2), (3, 2 * math.pi / 3)])
def test_phi1_normalisation(N, norm2):
    g = AxisymGrid(N, 401)
    ph = phi1(g)
    assert_allclose(g.quad(ph.values**2), 1.0, atol=1e-8)
    assert_allclose(ph.values[:-1], g.cos[:-1] / math.sqrt(norm2), rtol=1e-8)
    assert ph.values[-1] == 0.0


def test_constants_values():
    a2, b2 = constants(2)
    assert b2 == 0.5
    assert_allclose(a2, math.sqrt(2 * math.pi / 3), rtol=1e-6)
    assert constants(3)[1] == 1.0


def test_projection_properties():
    g = AxisymGrid(3, 201)
    ph = phi1(g)
    rng = np.random.default_rng(1)
    h = rng.normal(size=g.n)
    k = rng.normal(size=g.n)
    Ph = project_perp(h, ph)
    assert abs(g.quad(Ph * ph.values)) <= 1e-12
    assert_allclose(project_perp(Ph, ph), Ph, atol=1e-12)
    # self-adjoint in the discrete inner product
    assert_allclose(g.quad(Ph * k), g.quad(h * project_perp(k, ph)), atol=1e-12)
    assert_allclose(project_perp(ph, ph).values, 0.0, atol=1e-12)
    gperp = Ph
    assert_allclose(project_perp(ph.values + gperp, ph), gperp, atol=1e-12)


def test_profile_shape_checked():
    g = AxisymGrid(2, 11)
    with pytest.raises(InvalidGridError):
        SphericalProfile(g, np.zeros(5))


@settings(max_examples=100, deadline=None)
@given(N=st.integers(2, 8), p=st.floats(1.05, 12.0))
def test_lambda_identity(N, p):
    e = ExponentParams(N, p)
    assert_allclose(e.lambda_p, -e.m * (N - 2 - e.m), atol=1e-12, rtol=1e-14)


def test_exponent_params_windows():
    e = ExponentParams(2, 3.0)
    assert e.critical and e.m == 1.0 and e.p_upper == math.inf
    assert ExponentParams(5, 2.0).p_upper == 3.0
    with pytest.raises(ValueError):
        ExponentParams(1, 3.0)
    with pytest.raises(ValueError):
        ExponentParams(2, 1.0)
