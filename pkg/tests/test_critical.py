import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from boundary_singular.critical import (
    CylinderField,
    CylinderGrid,
    G_operator,
    Nonlinearities,
    ScalarTrack,
    T1Solver,
    T1_solve,
    T2_solve,
    assemble_u1_critical,
    error_E,
    fixed_point_solve,
    lemma_bound,
    spectral_cell,
)
from boundary_singular.errors import ConfigError, PreconditionError
from boundary_singular.sphere import AxisymGrid, constants, phi1, project_perp


@pytest.mark.parametrize("N", [2, 3])
def test_error_orthogonal_to_phi1(N):
    g = AxisymGrid(N, 401)
    E = error_E(np.array([10.0, 100.0]), g)
    assert np.max(np.abs(g.quad(E * phi1(g).values))) <= 1e-8


def test_error_factorises_in_t():
    g = AxisymGrid(2, 201)
    b = constants(2, g)[1]
    E = error_E(np.array([3.0, 7.0, 50.0]), g)
    prof = E[0] * 3.0 ** (b + 1)
    for t, row in zip((7.0, 50.0), E[1:]):
        assert_allclose(row * t ** (b + 1), prof, rtol=1e-12, atol=1e-14)


def _manufactured_T1(nt, n_alpha):
    grid = CylinderGrid(2, 2.0, 40.0, nt, n_alpha)
    ph = phi1(grid.sphere)
    P = project_perp(np.cos(3 * grid.alpha), ph)
    s = grid.t - grid.t_star
    g, g1, g2 = s * np.exp(-s), (1 - s) * np.exp(-s), (s - 2) * np.exp(-s)
    psi = g[:, None] * P[None, :]
    # (d_tt + 2 d_t + Delta_S + 1) applied exactly; Delta_S cos(3a) = -9 cos(3a) for N = 2
    c = np.cos(3 * grid.alpha)
    h = (g2 + 2 * g1)[:, None] * P[None, :] + g[:, None] * (-8 * c)[None, :]
    return grid, psi, project_perp(h, ph)


def test_T1_manufactured_second_order():
    errs = []
    for nt, na in ((381, 21), (761, 41), (1521, 81)):
        grid, psi, h = _manufactured_T1(nt, na)
        out = T1Solver(grid)(h)
        errs.append(np.max(np.abs(out - psi)))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.8)


def test_T1_zero_and_residual():
    grid, psi, h = _manufactured_T1(381, 21)
    solver = T1Solver(grid)
    assert np.all(solver(np.zeros_like(h)) == 0.0)
    out = solver(h)
    assert solver.residual(out, h) <= 1e-10
    assert solver.orthogonality(out) <= 1e-12
    field, const = T1_solve(CylinderField(grid, h, 0.75), 0.75, solver)
    assert_allclose(field.values, out)
    assert const > 0


def test_T1_rejects_non_orthogonal():
    grid = CylinderGrid(2, 2.0, 40.0, 101, 21)
    h = np.outer(np.exp(-grid.t), phi1(grid.sphere).values)
    with pytest.raises(PreconditionError):
        T1Solver(grid)(h)


def test_cylinder_grid_truncation_rule():
    with pytest.raises(ConfigError):
        CylinderGrid(2, 4.0, 30.0, 100)


@pytest.mark.parametrize("N", [2, 3])
def test_G_closed_form(N):
    ts = 4.0
    t = np.arange(ts, ts + 100, 0.01)
    G = G_operator(t, np.exp(-N * t), N)
    exact = -np.exp(-N * t) * ((t - ts) / N + 1 / N**2)
    assert np.max(np.abs(G - exact)) <= 1e-8
    # FD residual of (d_tt + N d_t) G = g
    h = t[1] - t[0]
    r = (G[2:] - 2 * G[1:-1] + G[:-2]) / h**2 + N * (G[2:] - G[:-2]) / (2 * h) - np.exp(-N * t[1:-1])
    assert np.max(np.abs(r)) <= 1e-5


@pytest.mark.parametrize("N, t_star", [(2, 4.0), (2, 8.0), (3, 4.0)])
def test_G_weighted_bound(N, t_star):
    sigma = (N - 1) / 2 + 0.25
    t = np.arange(t_star, t_star + 200, 0.01)
    g = t ** (-1 - sigma)
    G = G_operator(t, g, N, 1 + sigma)
    const = np.max(np.abs(t**sigma * G)) / np.max(t ** (1 + sigma) * g)
    assert const <= lemma_bound(N, sigma, t_star)


def test_T2_zero_and_linearity():
    t = np.arange(4.0, 204.0, 0.05)
    s = 0.75
    zero = T2_solve(ScalarTrack(t, np.zeros_like(t), s), s, 2)
    assert np.all(zero.f.values == 0.0)
    g = t ** -2.0
    k = np.exp(-t) + t ** -3.0
    a, b = 1.7, -0.3
    f_g = T2_solve(ScalarTrack(t, g, s), s, 2).f.values
    f_k = T2_solve(ScalarTrack(t, k, s), s, 2).f.values
    f_gk = T2_solve(ScalarTrack(t, a * g + b * k, s), s, 2).f.values
    assert_allclose(f_gk, a * f_g + b * f_k, atol=1e-12)


def test_T2_windows():
    t = np.arange(0.8, 100.0, 0.1)
    # sigma > (N-1)/2, then N t_* - 1 - sigma > 0
    with pytest.raises(ConfigError):
        T2_solve(ScalarTrack(t, t**-2.0), 0.4, 2)
    with pytest.raises(ConfigError):
        T2_solve(ScalarTrack(t, t**-2.0), 0.75, 2)


def test_nonlinearities_at_zero():
    grid = CylinderGrid.with_step(2, 4.0, 60.0, 0.5, 41)
    nl = Nonlinearities(grid)
    a, _ = constants(2, grid.sphere)
    t = grid.t
    ph = phi1(grid.sphere).values
    zero_psi = np.zeros((grid.nt, grid.n_alpha))
    zero_f = np.zeros(grid.nt)
    first = t[:, None] ** -1.5 * (a * ph - a**3 * ph**3)[None, :]
    assert_allclose(nl.N1(zero_psi, zero_f), first, atol=1e-14)
    assert_allclose(nl.N2(zero_psi, zero_f), 0.75 * a * t**-2.5, rtol=1e-14)


def test_N1_orthogonal_for_random_inputs():
    grid = CylinderGrid.with_step(2, 4.0, 60.0, 0.5, 41)
    nl = Nonlinearities(grid)
    rng = np.random.default_rng(3)
    ph = phi1(grid.sphere)
    psi = project_perp(1e-2 * rng.normal(size=(grid.nt, grid.n_alpha)), ph)
    psi[:, -1] = 0.0
    f = 1e-2 * rng.normal(size=grid.nt)
    out = nl.N1(psi, f)
    assert np.max(np.abs(grid.sphere.quad(out * ph.values))) <= 1e-8


def test_fixed_point_cell(critical_cell):
    c = critical_cell
    assert c.lipschitz < 0.5
    assert c.fixed_point_residual <= 1e-6
    assert c.ball_norm <= c.mu
    assert c.orthogonality() <= 1e-10
    assert np.all(c.phi[:, :-1] > 0)
    assert np.all(c.phi[:, -1] == 0.0)
    assert c.pde_residual <= 1e-10
    assert c.contraction_log[0]["iteration"] == 1


def test_one_step_consistency():
    grid = CylinderGrid.with_step(2, 8.0, None, 0.1, 41)
    nl = Nonlinearities(grid)
    z, zf = np.zeros((grid.nt, grid.n_alpha)), np.zeros(grid.nt)
    psi = T1Solver(grid)(nl.N1(z, zf))
    f = T2_solve(ScalarTrack(grid.t, nl.N2(z, zf), 0.75), 0.75, 2,
                 tail_exponent=2.5).f.values
    cell = fixed_point_solve(2, 8.0, 0.75, max_iter=1, tol=1e9, polish=False)
    assert_allclose(cell.psi1, psi, atol=1e-12)
    assert_allclose(cell.f2, f, atol=1e-12)


def test_sigma_window():
    with pytest.raises(ConfigError):
        fixed_point_solve(2, 8.0, 1.6)
    with pytest.raises(ConfigError):
        fixed_point_solve(2, 8.0, 0.75, mu=1.5)


def test_asymptotic_fit(critical_cell):
    fit = assemble_u1_critical(critical_cell)
    assert abs(fit.slope + 0.5) <= 0.05
    assert fit.shape_defect <= 0.05
    assert fit.window == (2 * critical_cell.grid.t_star, critical_cell.grid.T / 2)
    with pytest.raises(ConfigError):
        assemble_u1_critical(critical_cell, window=(1.0, 2.0))


def test_u_vanishes_on_flat_boundary(critical_cell):
    r = np.exp(-critical_cell.grid.t_star) * np.array([0.5, 0.1, 1e-3])
    x = np.column_stack([r, np.zeros_like(r)])
    assert_allclose(critical_cell.u(x), 0.0, atol=1e-12)


def test_grid_convergence():
    probes = (np.array([10.0, 20.0, 40.0]), np.array([0.2, 0.7, 1.2]))
    vals = []
    for h_t, na in ((0.2, 21), (0.1, 41), (0.05, 81)):
        c = fixed_point_solve(2, 4.0, 0.75, T=100.0, h_t=h_t, n_alpha=na)
        vals.append(c.phi_at(*probes))
    d1 = np.max(np.abs(vals[1] - vals[0]))
    d2 = np.max(np.abs(vals[2] - vals[1]))
    assert math.log2(d1 / d2) > 1.7


def test_spectral_cell(critical_cell):
    sc = spectral_cell(critical_cell, 12, 0.05, 200.0)
    t = np.array([5.0, 50.0, 150.0, 190.0])
    a = np.array([0.1, 0.6, 1.3, 0.0])
    res = np.abs(sc.cylinder_residual(t, a))
    assert res[0] < 1e-3  # boundary layer at t*, finite-difference check
    assert np.max(res[1:]) < 1e-8
    assert_allclose(sc.phi_at(4.0, a), critical_cell.phi_at(4.0, a), rtol=1e-6)
    # both discretisations pick members of the slowly translating family;
    # they merge on the universal a_N t^{-1/2} phi_1 decay
    far = np.array([150.0, 190.0])
    assert_allclose(sc.phi_at(far, 0.3), critical_cell.phi_at(far, 0.3), rtol=5e-3)
    assert np.all(sc.phi_at(np.linspace(4, 400, 50), 0.5) > 0)
