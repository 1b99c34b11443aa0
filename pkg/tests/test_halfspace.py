import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from boundary_singular.errors import PreconditionError
from boundary_singular.halfspace import (
    EFGrid,
    EFSolver,
    WeightedField,
    barrier_identity_residual,
    barrier_phistar,
    chi,
    flux_estimates,
    manufactured_study,
    phistar_exact_n2,
    u_infinity,
    weighted_norm,
    weighted_poisson_solve,
)

LOG2 = math.log(2.0)


def test_chi_limits_and_derivative():
    assert chi(0.5) == 0.0 and chi(0.0) == 0.0
    assert chi(-LOG2) == 1.0 and chi(-3.0) == 1.0
    t = np.linspace(-0.65, -0.05, 13)
    h = 1e-5
    assert_allclose(chi(t, 1), (chi(t + h) - chi(t - h)) / (2 * h), atol=1e-8)
    assert_allclose(chi(t, 2), (chi(t + h, 1) - chi(t - h, 1)) / (2 * h), atol=1e-6)


@pytest.mark.parametrize("delta", [0.0, 0.5, -0.5, 0.9])
def test_barrier_matches_closed_form(delta):
    prof = barrier_phistar(delta, 2, 401)
    exact = phistar_exact_n2(delta, prof.grid.alpha)
    assert_allclose(prof.values, exact, atol=1e-5 * np.max(exact))


@pytest.mark.parametrize("N,delta", [(3, 0.0), (3, -1.0), (3, 0.5), (4, -2.5)])
def test_barrier_positive(N, delta):
    prof = barrier_phistar(delta, N, 201)
    assert np.all(prof.values[:-1] > 0)
    assert prof.values[-1] == 0.0


@pytest.mark.parametrize("N,delta", [(2, 1.0), (2, -1.0), (3, -2.0), (3, 1.2)])
def test_barrier_window(N, delta):
    with pytest.raises(PreconditionError, match="1-N"):
        barrier_phistar(delta, N)


@pytest.mark.parametrize("N,delta", [(2, 0.5), (3, -1.0)])
def test_barrier_identity_second_order(N, delta):
    rng = np.random.default_rng(1)
    r = rng.uniform(0.5, 2.0, 6)
    a = rng.uniform(0.1, 1.2, 6)
    pts = np.zeros((6, N))
    pts[:, 0] = r * np.sin(a)
    pts[:, -1] = r * np.cos(a)
    errs = [barrier_identity_residual(delta, N, n, pts)[0] for n in (101, 201, 401)]
    rates = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(rates > 1.7)
    assert errs[-1] < 1e-3


def test_zero_data_gives_zero():
    dec = weighted_poisson_solve(lambda t, a: 0.0 * t, 2, 0.0, -1.5)
    assert np.max(np.abs(dec.u.values)) == 0.0
    assert dec.a == 0.0


@pytest.mark.parametrize("delta", [0.0, 0.5, -0.5])
def test_manufactured_second_order(delta):
    study = manufactured_study(delta)
    assert np.all(study.orders >= 1.8)
    assert study.errors[-1] < 1e-2


def test_pure_far_field_recovered():
    # u = chi u_inf is harmonic outside B_2, so all of it sits in the flux term
    N = 2

    def f(t, a):
        return (chi(t, 2) + 2 * chi(t, 1)) * np.exp(t) * np.cos(a)

    errs = []
    for h_t, n_alpha in ((0.025, 81), (0.0125, 161)):
        dec = weighted_poisson_solve(f, N, 0.0, -1.5, h_t=h_t, n_alpha=n_alpha)
        exact = chi(dec.u.grid.t)[:, None] * u_infinity(*dec.u.grid.mesh(), N)
        errs.append([abs(dec.a - 1), abs(dec.a_fit - 1),
                     np.max(np.abs(dec.u.physical() - exact)), dec.u_tilde.norm()])
    errs = np.array(errs)
    assert np.all(errs[1] < 5e-3)
    assert np.all(errs[0] / errs[1] > 3.0)


def test_flux_sign_for_positive_source():
    # |x|^2 Delta u = f <= 0 forces a positive flux coefficient
    grid = EFGrid(2, -24.0, 24.0, 0.05, 41)
    F = grid.sample(lambda t, a: -np.exp(-(t**2)) * np.cos(a))
    a, _ = flux_estimates(grid, F)
    assert a > 0


def test_weighted_norm_constant_field():
    grid = EFGrid(2, -3.0, 2.0, 0.5, 11)
    u = WeightedField(grid, np.ones((grid.nt, grid.n_alpha)), 0.5, -1.5)
    assert_allclose(weighted_norm(u, 0.5, -1.5), max(math.exp(1.0), math.exp(4.5)))
    assert_allclose(u.norm(), math.exp(4.5))


@settings(max_examples=10, deadline=None)
@given(st.floats(-3, 3), st.integers(0, 2**31 - 1))
def test_solver_linear(c, seed):
    grid = EFGrid(3, -4.0, 4.0, 0.2, 21)
    solver = EFSolver(grid)
    rng = np.random.default_rng(seed)
    F1, F2 = rng.standard_normal((2, grid.nt, grid.n_alpha))
    lhs = solver.solve(F1 + c * F2)
    assert_allclose(lhs, solver.solve(F1) + c * solver.solve(F2), atol=1e-10)


@pytest.mark.parametrize("N,delta,delta_prime", [(2, 0.0, -0.5), (2, 0.0, -2.5), (3, 0.5, -1.5),
                                                 (2, 1.5, -1.5)])
def test_weight_windows(N, delta, delta_prime):
    with pytest.raises(PreconditionError):
        weighted_poisson_solve(lambda t, a: 0.0 * t, N, delta, delta_prime)


def test_grid_must_cover_unit_sphere():
    with pytest.raises(PreconditionError):
        EFGrid(2, 0.5, 4.0, 0.1, 11)
