import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from numpy.testing import assert_allclose

from boundary_singular import glue
from boundary_singular.errors import ConfigError, PreconditionError


def _ball_point(theta, phi):
    return np.array([math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta)])


# -- charts ------------------------------------------------------------------

@settings(max_examples=25, deadline=None)
@given(st.floats(0, 2 * math.pi), st.floats(-0.8, 0.8), st.floats(0.0, 0.5))
def test_disk_chart_round_trip(th, s, d):
    chart = glue.fermi_map("disk", [math.cos(th), math.sin(th)])
    y = np.array([s, d])
    assert_allclose(chart.to_fermi(chart.from_fermi(y)), y, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.1, 3.0), st.floats(0, 2 * math.pi), st.floats(-0.6, 0.6), st.floats(-0.6, 0.6),
       st.floats(0.0, 0.5))
def test_ball_chart_round_trip(a, b, s1, s2, d):
    chart = glue.fermi_map("ball", _ball_point(a, b))
    y = np.array([s1, s2, d])
    assert_allclose(chart.to_fermi(chart.from_fermi(y)), y, atol=1e-12)


@pytest.mark.parametrize("domain,xi", [("disk", [0.6, 0.8]), ("ball", [0.0, 0.6, 0.8])])
def test_chart_identity_at_xi(domain, xi):
    chart = glue.fermi_map(domain, xi)
    n = len(xi)
    assert_allclose(chart.to_fermi(np.array(xi)), np.zeros(n), atol=1e-15)
    h = 1e-6
    J = np.stack([(chart.from_fermi(h * e) - chart.from_fermi(-h * e)) / (2 * h) for e in np.eye(n)], axis=1)
    frame = np.vstack([chart.frame, -np.array(xi)[None]]).T
    assert_allclose(J, frame, atol=1e-8)


def test_chart_errors():
    with pytest.raises(ConfigError):
        glue.fermi_map("disk", [1.0, 0.0, 0.0])
    with pytest.raises(ConfigError):
        glue.fermi_map("square", [1.0, 0.0])
    with pytest.raises(PreconditionError, match="ξ"):
        glue.fermi_map("disk", [0.5, 0.0])


def test_laplacian_discrepancy_of_distance():
    # d = 1 - |x| has Delta_x d = -1/|x| while Delta_y d = 0
    chart = glue.fermi_map("disk", [1.0, 0.0])
    y = np.array([[0.1, 0.05], [-0.2, 0.3], [0.0, 0.5]])
    disc = glue.laplacian_discrepancy(chart, lambda z: z[..., 1], y)
    assert_allclose(disc, -1 / (1 - y[:, 1]), rtol=1e-5)


# -- glued field --------------------------------------------------------------

def test_u_eps_support(disk_profile):
    cfg = glue.GlueConfig(singular_points=[0.0], p=3.0, eps=1e-3, R=0.2)
    f = glue.build_u_eps(cfg, disk_profile)
    th = np.linspace(0.0, 2 * math.pi, 50, endpoint=False)
    far = np.column_stack([0.5 * np.cos(th) - 0.1, 0.5 * np.sin(th)])
    W, E = f.evaluate(far)
    assert np.all(W == 0) and np.all(E == 0)
    near = np.array([[0.9, 0.0], [0.95, 0.05]])
    assert np.all(f.value(near) > 0)


def test_u_eps_superposition(disk_profile):
    pts = [0.0, 2.0]
    both = glue.build_u_eps(glue.GlueConfig(singular_points=pts, p=3.0), disk_profile)
    x = np.array([[0.9, 0.01], [0.97 * math.cos(2.05), 0.97 * math.sin(2.05)], [0.0, 0.0]])
    parts = sum(glue.build_u_eps(glue.GlueConfig(singular_points=[q], p=3.0), disk_profile).value(x)
                for q in pts)
    assert_allclose(both.value(x), parts, rtol=1e-14)


def test_overlapping_supports_rejected(disk_profile):
    cfg = glue.GlueConfig(singular_points=[0.0, 0.5], p=3.0, R=0.2)
    with pytest.raises(ConfigError, match="overlap"):
        glue.build_u_eps(cfg, disk_profile)


def test_error_term_matches_finite_differences(disk_profile):
    # E = Delta W + W^p from the cell residual and chart terms
    f = glue.build_u_eps(glue.GlueConfig(singular_points=[0.0], p=3.0, eps=1e-2), disk_profile)
    x = np.array([[0.8, 0.1], [0.7, -0.2], [0.9, 0.25], [0.95, 0.02]])
    h = 1e-4
    W0 = f.value(x)
    lap = sum(f.value(x + h * e) - 2 * W0 + f.value(x - h * e) for e in np.eye(2)) / h**2
    _, E = f.evaluate(x)
    assert_allclose(E, lap + W0**3, atol=1e-4 * np.max(np.abs(lap)))


# -- mesh, quadrature and corrector ----------------------------------------

@pytest.fixture(scope="module")
def mesh():
    c = glue.GlueConfig(singular_points=[0.0]).refined(1)
    return glue.disk_mesh(c.points(), c.h0, c.log_step, c.rho_min)


def test_mesh_and_quadrature_area(mesh):
    q = glue.mesh_quadrature(mesh)
    assert_allclose(q.integrate(np.ones(len(q.x))), mesh.areas.sum(), rtol=1e-12)
    assert mesh.areas.sum() < math.pi
    dist = np.linalg.norm(mesh.points - [1.0, 0.0], axis=1)
    assert_allclose(np.min(dist[dist > 0]), mesh.rho_min, rtol=1e-9)


def test_interpolation_exact_for_linear(mesh):
    vals = 2 * mesh.points[:, 0] - mesh.points[:, 1] + 0.5
    x = np.array([[0.1, 0.2], [-0.5, 0.3], [0.9, -0.05]])
    assert_allclose(mesh.interpolate(vals, x), 2 * x[:, 0] - x[:, 1] + 0.5, atol=1e-12)
    with pytest.raises(PreconditionError):
        mesh.locate([[1.1, 0.0]])


def test_corrector_zero_data(mesh):
    res = glue.weighted_corrector_solve(lambda x: np.zeros(len(x)), mesh, 0.0)
    assert np.all(res.u == 0)


@pytest.mark.parametrize("delta", [0.0, -0.5])
def test_corrector_manufactured(delta):
    st_ = glue.manufactured_study(delta, (1, 2, 3))
    assert st_.order >= 1.8
    assert st_.constant_spread < 0.05


# -- glued solution ----------------------------------------------------------

def test_fixed_point_contracts(glued):
    assert 0 < glued.lipschitz < 1
    assert glued.v_norm <= glued.ball_radius
    assert glued.min_u > 0


def test_probes(glued):
    sing = glue.nontangential_probe(glued, [1.0, 0.0])
    assert sing.growth_ratio > 1e2 and sing.monotone
    reg = glue.nontangential_probe(glued, [0.0, 1.0], 0.25 * math.pi)
    assert np.all(reg.values > 0)
    assert reg.values[-1] < 1e-3
    with pytest.raises(PreconditionError):
        glue.nontangential_probe(glued, [1.0, 0.0], 2.0)


def test_very_weak_defects_small(glued):
    rep = glue.verify_very_weak(glued)
    assert rep.defects.shape == (8,)
    assert np.max(rep.defects) < 1e-2 * rep.int_u
    assert np.isfinite(rep.int_up_dist)


def test_suite_laplacian():
    phi, lap = glue.suite_function(1, 1)
    x = np.random.default_rng(0).uniform(-0.5, 0.5, (20, 2))
    P = (1 - np.sum(x**2, axis=1)) * x[:, 0] * x[:, 1]
    assert_allclose(phi(x), P)
    h = 1e-4
    fd = sum(phi(x + h * e) - 2 * phi(x) + phi(x - h * e) for e in np.eye(2)) / h**2
    assert_allclose(lap(x), fd, atol=1e-5)


def test_suite_vanishes_on_circle():
    th = np.linspace(0, 2 * math.pi, 17)
    c = np.column_stack([np.cos(th), np.sin(th)])
    for phi, _ in glue.very_weak_suite():
        assert np.max(np.abs(phi(c))) < 1e-14


def test_single_stage(disk_profile):
    cfg = glue.GlueConfig(singular_points=[0.0], p=3.0, eps=1e-3).refined(2)
    sol, log = glue.multi_stage(cfg, disk_profile, 1)
    assert len(log) == 1 and log[0].passed
    rec = log[0]
    assert max(rec.l1_increment, rec.power_increment_raised, rec.sup_v) <= 0.5
    assert sol.min_u > 0


@pytest.mark.parametrize(
    "kwargs,match",
    [
        ({"p": 2.5}, "p must be at least"),
        ({"eps": 1.5}, "ε"),
        ({"delta": 0.5}, "δ"),
        ({"k": 1}, "k must be 0"),
        ({"domain": "square"}, "domain"),
        ({"singular_points": [0.0, 0.2]}, "2R"),
    ],
)
def test_config_validation(kwargs, match):
    with pytest.raises(ConfigError, match=match):
        glue.GlueConfig(**kwargs).validate()


def test_ball_gluing_not_available(disk_profile):
    cfg = glue.GlueConfig(domain="ball", singular_points=[[0.0, 0.0, 1.0]], p=2.0)
    with pytest.raises(ConfigError, match="disk"):
        glue.glue_fixed_point(cfg, disk_profile)


def test_too_many_stages(disk_profile):
    with pytest.raises(ConfigError, match="stages"):
        glue.multi_stage(glue.GlueConfig(singular_points=[0.0], p=3.0), disk_profile, 2)
