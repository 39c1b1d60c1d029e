import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prescurv.mesh import (
    GridError,
    build_annulus,
    build_rectangle,
    dirichlet_energy,
    flat_laplacian,
    flux,
    grid_from_spec,
    inner_product,
    integrate,
    laplacian_matrix,
    normal_derivative,
    restrict_to_boundary,
)
from prescurv.metric import cusp_metric


# -- builders -------------------------------------------------------------------

def test_annulus_rejects_small_n_r():
    with pytest.raises(GridError, match="n_r"):
        build_annulus(1.0, 2.0, 3, 4)


def test_annulus_counts():
    g = build_annulus(1.0, 2.0, 11, 16)
    assert g.size == 176
    assert int(g.boundary.sum()) == 32
    assert g.n_interior == 144


def test_annulus_spacing():
    g = build_annulus(0.05, 0.5, 128, 256)
    assert g.d1 == pytest.approx(0.45 / 127, rel=1e-14)
    assert g.d1 == pytest.approx(3.543e-3, abs=1e-6)


def test_annulus_theta_has_no_seam_node():
    g = build_annulus(1.0, 2.0, 9, 8)
    assert g.c2[0] == 0.0
    assert g.c2[-1] == pytest.approx(2 * np.pi * 7 / 8)


@pytest.mark.parametrize("args", [(0.0, 1.0, 9, 8), (2.0, 1.0, 9, 8), (-1.0, 1.0, 9, 8), (1.0, 2.0, 9, 7)])
def test_annulus_bad_arguments(args):
    with pytest.raises(GridError):
        build_annulus(*args)


def test_rectangle_counts():
    g = build_rectangle(1, 1, 9, 9)
    assert g.size == 81
    assert int(g.boundary.sum()) == 32


def test_rectangle_spacing():
    g = build_rectangle(1, 1, 129, 129)
    assert g.d1 == 1 / 128 and g.d2 == 1 / 128


@pytest.mark.parametrize("args", [(0, 1, 9, 9), (1, -1, 9, 9), (1, 1, 8, 9)])
def test_rectangle_bad_arguments(args):
    with pytest.raises(GridError):
        build_rectangle(*args)


def test_grid_spec_round_trip():
    for g in (build_annulus(0.05, 0.5, 17, 32), build_rectangle(1.0, 2.0, 9, 11)):
        assert grid_from_spec(g.spec()) == g


def test_grid_masks_are_read_only():
    g = build_rectangle(1, 1, 9, 9)
    with pytest.raises(ValueError):
        g.boundary[0, 0] = False


# -- Laplacian -----------------------------------------------------------------

@pytest.mark.parametrize("grid", [build_rectangle(1.0, 1.0, 17, 17), build_annulus(1.0, 2.0, 17, 32)])
def test_laplacian_of_constant(grid):
    lap = flat_laplacian(np.full(grid.shape, 3.7), grid)
    assert np.max(np.abs(lap)) < 1e-10


def test_laplacian_quadratic_rectangle():
    g = build_rectangle(1.0, 1.0, 17, 17)
    x, y = g.cartesian()
    lap = flat_laplacian(x**2 + y**2, g)
    assert np.max(np.abs(lap[g.interior] - 4.0)) < 1e-10


def test_laplacian_log_r_harmonic():
    g = build_annulus(0.5, 1.5, 283, 64)  # spacing 3.5e-3, r = 1 is a node
    r, _ = g.mesh()
    lap = flat_laplacian(np.log(r), g)
    i1 = int(np.argmin(np.abs(g.c1 - 1.0)))
    assert abs(g.c1[i1] - 1.0) < 1e-12
    assert np.max(np.abs(lap[i1])) < 1e-4
    assert np.max(np.abs(lap[g.interior])) < 1e-4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=10, max_size=10))
def test_laplacian_exact_on_cubics(c):
    g = build_rectangle(1.3, 0.8, 11, 13)
    x, y = g.cartesian()
    f = (c[0] + c[1] * x + c[2] * y + c[3] * x**2 + c[4] * x * y + c[5] * y**2
         + c[6] * x**3 + c[7] * x**2 * y + c[8] * x * y**2 + c[9] * y**3)
    exact = 2 * c[3] + 2 * c[5] + 6 * c[6] * x + 2 * c[7] * y + 2 * c[8] * x + 6 * c[9] * y
    assert np.max(np.abs(flat_laplacian(f, g) - exact)) <= 1e-12 * max(1.0, np.max(np.abs(f)))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 15))
def test_laplacian_commutes_with_theta_shift(seed, shift):
    g = build_annulus(0.3, 1.1, 9, 16)
    f = np.random.default_rng(seed).standard_normal(g.shape)
    a = flat_laplacian(np.roll(f, shift, axis=1), g)
    b = np.roll(flat_laplacian(f, g), shift, axis=1)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("grid", [build_rectangle(1.0, 0.7, 13, 11), build_annulus(0.2, 1.0, 13, 16)])
def test_laplacian_matrix_matches_stencil(grid):
    rng = np.random.default_rng(1)
    u = np.where(grid.interior, rng.standard_normal(grid.shape), 0.0)
    L = laplacian_matrix(grid)
    lhs = L @ u[grid.interior]
    rhs = flat_laplacian(u, grid)[grid.interior]
    assert np.max(np.abs(lhs - rhs)) <= 1e-10 * np.max(np.abs(rhs))


@pytest.mark.parametrize("grid", [build_rectangle(1.0, 0.7, 13, 11), build_annulus(0.2, 1.0, 13, 16)])
def test_dirichlet_energy_is_summation_by_parts(grid):
    rng = np.random.default_rng(2)
    u = np.where(grid.interior, rng.standard_normal(grid.shape), 0.0)
    pairing = -np.sum(u * flat_laplacian(u, grid) * grid.flat_area) * grid.d1 * grid.d2
    assert dirichlet_energy(u, grid) == pytest.approx(pairing, rel=1e-12)


@pytest.mark.parametrize("kind", ["annulus", "rectangle"])
def test_divergence_identity_second_order(kind):
    errs = []
    for n in (33, 65, 129):
        g = build_annulus(0.5, 1.5, n, 2 * n) if kind == "annulus" else build_rectangle(1.0, 0.7, n, n)
        x, y = g.cartesian()
        f = np.exp(0.7 * x) * np.cos(1.3 * y) + x**2 * y
        errs.append(abs(integrate(flat_laplacian(f, g), g.flat_area, g) - flux(f, g)))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


# -- quadrature ----------------------------------------------------------------

def test_integrate_unit_square():
    g = build_rectangle(1.0, 1.0, 33, 33)
    assert integrate(np.ones(g.shape), g.flat_area, g) == pytest.approx(1.0, abs=1e-12)


def test_integrate_annulus_area():
    g = build_annulus(1.0, 2.0, 128, 256)
    assert integrate(np.ones(g.shape), g.flat_area, g) == pytest.approx(3 * np.pi, abs=1e-3)


def test_integrate_cusp_area():
    m = cusp_metric(build_annulus(0.05, 0.5, 128, 256))
    exact = 2 * np.pi * (1 / np.log(2) - 1 / np.log(20))
    assert integrate(np.ones(m.grid.shape), m.h * m.grid.flat_area, m.grid) == pytest.approx(exact, abs=1e-2)


@pytest.mark.parametrize("kind", ["annulus", "rectangle"])
def test_quadrature_second_order(kind):
    errs = []
    for n in (17, 33, 65):
        if kind == "annulus":
            g = build_annulus(1.0, 2.0, n, 2 * n)
            r, _ = g.mesh()
            f = np.exp(-r)
            exact = 2 * np.pi * (2 * np.exp(-1) - 3 * np.exp(-2))
        else:
            g = build_rectangle(1.0, 1.0, n, n)
            x, y = g.mesh()
            f = np.exp(x) * y**3
            exact = (np.e - 1) / 4
        errs.append(abs(integrate(f, g.flat_area, g) - exact))
    assert errs[0] / errs[1] >= 3.5 and errs[1] / errs[2] >= 3.5


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_inner_product_properties(seed):
    g = build_annulus(0.2, 1.0, 9, 8)
    rng = np.random.default_rng(seed)
    f, h = rng.standard_normal(g.shape), rng.standard_normal(g.shape)
    w = g.flat_area
    assert inner_product(f, f, w, g) >= 0
    assert inner_product(f, h, w, g) == inner_product(h, f, w, g)
    assert inner_product(np.ones(g.shape), np.ones(g.shape), w, g) == integrate(np.ones(g.shape), w, g)


def test_inner_product_grid_mismatch():
    g = build_rectangle(1, 1, 9, 9)
    with pytest.raises(GridError):
        inner_product(np.ones((9, 9)), np.ones((10, 9)), g.flat_area, g)


# -- boundary traces -----------------------------------------------------------

def test_normal_derivative_of_r():
    g = build_annulus(1.0, 2.0, 11, 16)
    r, _ = g.mesh()
    dn = normal_derivative(r, g).components
    assert np.allclose(dn["outer"][1], 1.0, atol=1e-12)
    assert np.allclose(dn["inner"][1], -1.0, atol=1e-12)


def test_normal_derivative_of_r_squared():
    g = build_annulus(1.0, 2.0, 11, 16)
    r, _ = g.mesh()
    dn = normal_derivative(r**2, g).components
    assert np.allclose(dn["outer"][1], 4.0, atol=1e-12)
    assert np.allclose(dn["inner"][1], -2.0, atol=1e-12)


@pytest.mark.parametrize("grid", [build_rectangle(1.0, 1.0, 9, 9), build_annulus(1.0, 2.0, 9, 8)])
def test_normal_derivative_of_constant(grid):
    assert normal_derivative(np.full(grid.shape, 2.5), grid).max_abs() < 1e-12


def test_rectangle_normals_point_outward():
    g = build_rectangle(1.0, 1.0, 9, 9)
    x, y = g.cartesian()
    dn = normal_derivative(x + 2 * y, g).components
    assert np.allclose(dn["left"][1], -1.0) and np.allclose(dn["right"][1], 1.0)
    assert np.allclose(dn["bottom"][1], -2.0) and np.allclose(dn["top"][1], 2.0)


def test_restrict_to_boundary_covers_boundary_once():
    g = build_rectangle(1.0, 1.0, 9, 9)
    trace = restrict_to_boundary(np.ones(g.shape), g)
    assert np.array_equal(trace.as_field() > 0, g.boundary)
    assert sum(len(v) for _, v in trace.components.values()) == int(g.boundary.sum())


def test_boundary_line_integral_annulus():
    g = build_annulus(1.0, 2.0, 9, 64)
    assert restrict_to_boundary(np.ones(g.shape), g).line_integral() == pytest.approx(6 * np.pi)
