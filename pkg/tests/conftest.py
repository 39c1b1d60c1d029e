import numpy as np
import pytest

from prescurv.mesh import build_annulus, build_rectangle
from prescurv.metric import cusp_metric
from prescurv.problem import CurvatureProblem, blend_target, manufactured_target

R_IN, R_OUT = 0.05, 0.5


def manufactured_sigma(grid, amplitude=-0.3):
    r, _ = grid.mesh()
    return amplitude * np.sin(np.pi * (r - grid.r_in) / (grid.r_out - grid.r_in))


def scale2_problem(n_r=128, n_theta=256, collar_frac=0.1):
    m = cusp_metric(build_annulus(R_IN, R_OUT, n_r, n_theta))
    w = collar_frac * (R_OUT - R_IN)
    return CurvatureProblem(m, blend_target(m, w, scale=2.0), w)


def manufactured_problem(n_r=128, n_theta=256):
    m = cusp_metric(build_annulus(R_IN, R_OUT, n_r, n_theta))
    star = manufactured_sigma(m.grid)
    return CurvatureProblem(m, manufactured_target(star, m)), star


@pytest.fixture(scope="session")
def cusp_small():
    return cusp_metric(build_annulus(R_IN, R_OUT, 33, 64))


@pytest.fixture(scope="session")
def unit_square():
    return build_rectangle(1.0, 1.0, 33, 33)


@pytest.fixture(scope="session")
def small_scale2():
    return scale2_problem(33, 64)


@pytest.fixture(scope="session")
def small_manufactured():
    return manufactured_problem(33, 64)
