import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from boundary_singular.errors import NoSolutionError, PreconditionError
from boundary_singular.separable import (
    extend_cell_k,
    solve_phip,
    u0_eval,
    u0_residual,
    verify_bifurcation,
)
from boundary_singular.sphere import ExponentParams


@pytest.fixture(scope="module")
def cell():
    return solve_phip(ExponentParams(2, 3.2))


def test_critical_has_no_solution():
    with pytest.raises(NoSolutionError):
        solve_phip(ExponentParams(2, 3.0))


def test_profile_positive_with_zero_at_equator(cell):
    v = cell.profile.values
    assert np.all(v[:-1] > 0)
    assert v[-1] == 0.0
    assert cell.residual <= 1e-8
    assert cell.fd_defect < 1e-4


def test_p4_lambda_and_existence():
    params = ExponentParams(2, 4.0)
    assert_allclose(params.lambda_p, 4 / 9, atol=1e-14)
    res = solve_phip(params)
    assert res.s_star > 0 and np.all(res.profile.values[:-1] > 0)


def test_even_reflection_satisfies_bvp(cell):
    # on (-pi/2, pi/2) the reflected profile solves f'' + lambda f + f^p = 0 with zero ends
    a = np.linspace(-math.pi / 2, math.pi / 2, 2001)
    f = cell.phi(np.abs(a))
    h = a[1] - a[0]
    d2 = (f[2:] - 2 * f[1:-1] + f[:-2]) / h**2
    lam, p = cell.params.lambda_p, cell.params.p
    assert np.max(np.abs(d2 + lam * f[1:-1] + f[1:-1] ** p)) < 1e-5
    assert abs(f[0]) <= 1e-8 and abs(f[-1]) <= 1e-8


def test_u0_boundary_and_homogeneity(cell):
    x = np.array([[0.7, 0.0], [-2.0, 0.0]])
    assert_allclose(u0_eval(x, cell), 0.0, atol=1e-12)
    y = np.array([[0.3, 0.4], [-0.1, 0.9], [0.5, 0.05]])
    for lam in (0.5, 3.0):
        assert_allclose(u0_eval(lam * y, cell), lam ** (-cell.params.m) * u0_eval(y, cell), rtol=1e-12)
    with pytest.raises(PreconditionError):
        u0_eval(np.zeros(2), cell)
    with pytest.raises(PreconditionError):
        u0_eval(np.array([0.2, -0.1]), cell)


def test_u0_residual_second_order(cell):
    x = np.array([[0.3, 0.5], [-0.4, 0.7], [0.1, 0.9]])
    r = [np.max(np.abs(u0_residual(cell, x, h))) for h in (2e-2, 1e-2, 5e-3)]
    rates = np.log2(np.array(r[:-1]) / r[1:])
    assert np.all(rates > 1.8)


def test_bifurcation_n2(cell):
    fit = verify_bifurcation(2, [3.2, 3.1, 3.05])
    assert fit.defined and fit.variation < 0.05
    assert fit.monotone


def test_bifurcation_single_entry_undefined():
    fit = verify_bifurcation(2, [3.2])
    assert not fit.defined and fit.variation is None


def test_bifurcation_n3_shrinking_variation():
    fit = verify_bifurcation(3, [2.2, 2.1, 2.05])
    r = fit.ratio
    assert fit.monotone
    assert abs(r[2] - r[1]) < abs(r[1] - r[0])


@pytest.mark.parametrize("k", [0, 1, 2])
def test_extend_cell_k(cell, k):
    pts = np.array([[0.3, 0.5], [-0.4, 0.7], [0.1, 0.9]])
    rep = extend_cell_k(cell, k, pts)
    assert rep["max_abs_difference"] <= 1e-12


def test_extend_cell_negative_k(cell):
    with pytest.raises(PreconditionError):
        extend_cell_k(cell, -1, np.ones((1, 2)))
