import math

import numpy as np
import pytest
from numpy.testing import assert_allclose

from boundary_singular.connection import (
    check_windows,
    default_delta_prime,
    residual_certificate,
    residual_rhs,
    scaled_family,
    slow_mode,
    solve_connection,
)
from boundary_singular.errors import ConfigError
from boundary_singular.halfspace import EFGrid
from boundary_singular.separable import solve_phip
from boundary_singular.sphere import ExponentParams

LOG2 = math.log(2.0)


def test_flux_positive_and_consistent(connection_cell):
    c = connection_cell
    assert c.a_p > 0
    assert abs(c.a_p - c.a_p_fit) <= 0.02 * c.a_p


def test_slopes(connection_cell):
    c = connection_cell
    m, N = c.params.m, c.params.N
    assert abs(c.inner_slope + m) <= 0.02 * m
    assert abs(c.outer_slope + (N - 1)) <= 0.02 * (N - 1)


def test_positive_and_follows_u0(connection_cell):
    c = connection_cell
    assert np.all(c.u_grid[1:-1, :-1] > 0)
    assert c.inner_ratio < 0.1


def test_picard_map_contracts(connection_cell):
    assert 0 <= connection_cell.lipschitz < 1


def test_slow_mode_small_and_negative():
    shoot = solve_phip(ExponentParams(2, 3.05))
    mu, psi = slow_mode(shoot, EFGrid(2, -1.0, 1.0, 0.05, 41).sphere)
    assert -0.5 < mu < 0
    assert_allclose(psi[0], shoot.phi(0.0))
    assert psi[-1] == 0.0


def test_residual_rhs_supported_in_cutoff_layer():
    shoot = solve_phip(ExponentParams(2, 3.2))
    t = np.linspace(-3, 3, 121)
    T, A = np.meshgrid(t, np.linspace(0, 0.5 * math.pi, 11), indexing="ij")
    R = residual_rhs(0.0, T, A, shoot)
    outside = (T < -LOG2 - 1e-9) | (T > 1e-9)
    assert np.all(R[outside] == 0.0)
    assert np.max(np.abs(R)) > 0


def test_scaled_family(connection_cell):
    c = connection_cell
    lam = 3.0
    u_lam = scaled_family(c, lam)
    t = np.array([-1.0, 0.5, 2.0])
    a = np.array([0.0, 0.4, 1.0])
    assert_allclose(u_lam(t, a), lam**c.params.m * c.u(t - math.log(lam), a), rtol=1e-12)
    assert_allclose(scaled_family(c, 1.0)(t, a), c.u(t, a), rtol=1e-12)
    with pytest.raises(ConfigError, match="λ > 0"):
        scaled_family(c, 0.0)


def test_residual_certificate(connection_cell):
    # points away from the cutoff annulus 1 < r < 2, whose steep source is
    # only resolved to the grid step
    c = connection_cell
    a = np.array([0.2, 0.6, 1.0])
    for r in (0.1, 0.4, 5.0, 8.0):
        pts = np.stack([r * np.sin(a), r * np.cos(a)], axis=1)
        assert residual_certificate(c, pts, h=0.005 * r) < 0.03


@pytest.mark.parametrize(
    "p,delta,delta_prime,match",
    [
        (2.9, -0.5, -1.5, "p must exceed"),
        (3.2, 1.5, -1.5, "1-N"),
        (3.2, -0.95, -1.5, "−2/\\(p−1\\)"),
        (3.2, -0.5, -0.5, "\\(-N, 1-N\\)"),
        (3.5, -0.5, -1.7, "p\\(1−N\\)\\+2"),
    ],
)
def test_window_errors(p, delta, delta_prime, match):
    with pytest.raises(ConfigError, match=match):
        check_windows(ExponentParams(2, p), delta, delta_prime)


def test_default_delta_prime_admissible():
    for p in (3.05, 3.5, 5.0):
        params = ExponentParams(2, p)
        dp = default_delta_prime(params)
        assert max(-2, p * (1 - 2) + 2) < dp < -1


def test_solver_config_errors():
    params = ExponentParams(2, 3.2)
    with pytest.raises(ConfigError, match="method"):
        solve_connection(params, method="secant")
    with pytest.raises(ConfigError, match="≤ 0"):
        solve_connection(params, slow_coefficient=0.5)
