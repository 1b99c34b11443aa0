import pytest

from boundary_singular import acceptance, glue
from boundary_singular.connection import solve_connection
from boundary_singular.critical import auto_t_star
from boundary_singular.sphere import ExponentParams


@pytest.fixture(scope="session")
def critical_cell():
    return auto_t_star(2)


@pytest.fixture(scope="session")
def connection_cell():
    return solve_connection(ExponentParams(2, 3.05))


@pytest.fixture(scope="session")
def disk_profile():
    return acceptance.critical_disk_profile()


@pytest.fixture(scope="session")
def glued(disk_profile):
    cfg = glue.GlueConfig(singular_points=[0.0], p=3.0, eps=1e-3).refined(2)
    return glue.glue_fixed_point(cfg, disk_profile)
