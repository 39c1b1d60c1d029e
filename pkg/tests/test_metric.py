import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from prescurv.mesh import build_annulus, build_rectangle
from prescurv.metric import (
    Cutoff,
    MetricError,
    OrthogonalMetric,
    blend_metrics,
    curvature_conformal,
    curvature_orthogonal,
    cusp_metric,
    cutoff_eval,
    example_blend,
    flat_metric,
    from_factor,
    paper4_factor,
    poincare_metric,
    smoothstep,
)


def cusp_oracle_lap_log_h(r):
    # log h = -2 log r - 2 log log(1/r); its flat Laplacian is 2 / (r log(1/r))^2
    return 2.0 / (r * np.log(1.0 / r)) ** 2


def test_flat_factor_has_zero_curvature():
    g = build_rectangle(1.0, 1.0, 17, 17)
    m = flat_metric(g)
    assert np.all(m.K0 == 0.0)
    assert np.array_equal(m.dmu, g.flat_area * g.quad_weights)


def test_constant_factor_is_flat():
    g = build_annulus(0.5, 1.0, 17, 32)
    K = curvature_conformal(np.full(g.shape, 2.7), g)
    assert np.max(np.abs(K)) < 1e-12


def test_nonpositive_factor_names_node():
    g = build_annulus(0.5, 1.0, 17, 32)
    h = np.ones(g.shape)
    h[4, 7] = 0.0
    with pytest.raises(MetricError, match=r"\(4, 7\)"):
        from_factor(g, h)


def test_cusp_closed_form_laplacian():
    # independent check of the closed-form differentiation used by the oracle
    r = np.linspace(0.06, 0.49, 50)
    h = 1e-5
    logh = lambda s: -2 * np.log(s * np.log(1 / s))
    lap = (logh(r + h) - 2 * logh(r) + logh(r - h)) / h**2 + (logh(r + h) - logh(r - h)) / (2 * h) / r
    assert np.allclose(lap, cusp_oracle_lap_log_h(r), rtol=1e-5)
    K = -cusp_oracle_lap_log_h(r) / (2 * (r * np.log(1 / r)) ** -2)
    assert np.allclose(K, -1.0)


def test_cusp_curvature_minus_one():
    m = cusp_metric(build_annulus(0.05, 0.5, 128, 256))
    assert np.max(np.abs(m.K0 + 1.0)[m.grid.interior]) <= 1e-3


def test_poincare_curvature_minus_one():
    m = poincare_metric(build_annulus(0.1, 0.8, 128, 256))
    assert np.max(np.abs(m.K0 + 1.0)[m.grid.interior]) <= 1e-3


@pytest.mark.parametrize("builder", [cusp_metric, poincare_metric])
def test_metric_needs_r_out_below_one(builder):
    with pytest.raises(MetricError):
        builder(build_annulus(0.5, 1.0, 17, 32))


def test_orthogonal_flat_polar():
    g = build_annulus(0.5, 1.5, 65, 64)
    r, _ = g.mesh()
    K = curvature_orthogonal(OrthogonalMetric(g, np.ones(g.shape), r**2))
    assert np.max(np.abs(K)) <= 1e-10


def test_orthogonal_agrees_with_conformal_cusp():
    m = cusp_metric(build_annulus(0.05, 0.5, 128, 256))
    K = curvature_orthogonal(OrthogonalMetric.from_conformal(m))
    inner = m.grid.interior
    assert np.max(np.abs(K + 1.0)[inner]) <= 1e-3
    assert np.max(np.abs(K - m.K0)[inner]) <= 5e-3


def test_orthogonal_needs_annulus():
    g = build_rectangle(1.0, 1.0, 9, 9)
    with pytest.raises(MetricError):
        OrthogonalMetric(g, np.ones(g.shape), np.ones(g.shape))


def test_log_factor_curvature_at_r1_both_signs():
    g = build_annulus(0.5, 1.5, 129, 64)
    i1 = 64
    assert g.c1[i1] == 1.0
    m = paper4_factor(g)
    magnitude = 1.0 / (2.0 * np.log(4.0) ** 3)
    assert magnitude == pytest.approx(0.18766, abs=2e-5)
    assert np.allclose(m.K0[i1], magnitude, atol=1e-3)
    om = OrthogonalMetric.from_conformal(m)
    assert np.allclose(curvature_orthogonal(om, "conventional")[i1], magnitude, atol=1e-3)
    assert np.allclose(curvature_orthogonal(om, "paper")[i1], -magnitude, atol=1e-3)


def test_log_factor_is_positively_curved_everywhere():
    g = build_annulus(0.5, 3.0, 65, 32)
    m = paper4_factor(g)
    r, _ = g.mesh()
    oracle = 1.0 / (2.0 * r**2 * np.log(4.0 / r) ** 3)
    assert np.all(m.K0[g.interior] > 0)
    assert np.max(np.abs(m.K0 - oracle)[g.interior] / oracle[g.interior]) < 1e-3


def test_log_factor_needs_r_out_below_four():
    with pytest.raises(MetricError):
        paper4_factor(build_annulus(1.0, 4.0, 17, 32))


def test_orthogonal_sign_argument_checked():
    m = cusp_metric(build_annulus(0.05, 0.5, 17, 32))
    with pytest.raises(ValueError):
        curvature_orthogonal(OrthogonalMetric.from_conformal(m), "other")


@settings(max_examples=20, deadline=None)
@given(st.floats(0.01, 100.0))
def test_conformal_scaling_law(c):
    m = cusp_metric(build_annulus(0.05, 0.5, 17, 32))
    scaled = curvature_conformal(c * m.h, m.grid)
    assert np.max(np.abs(scaled - m.K0 / c)) <= 1e-12 * max(1.0, np.max(np.abs(m.K0 / c)))
    assert np.allclose(m.scaled(c).K0, m.K0 / c, rtol=1e-12, atol=1e-12)


def test_cached_curvature_matches_fresh_evaluation():
    for m in (cusp_metric(build_annulus(0.05, 0.5, 33, 64)), example_blend(build_annulus(1.0, 3.0, 33, 64))):
        assert np.array_equal(m.K0, curvature_conformal(m.h, m.grid))


def test_metric_arrays_are_read_only():
    m = cusp_metric(build_annulus(0.05, 0.5, 17, 32))
    with pytest.raises(ValueError):
        m.h[3, 3] = 1.0


# -- cutoffs and blends ---------------------------------------------------------

def test_cutoff_plateaus_and_midpoint():
    c = Cutoff(1.5, 2.0, "decreasing")
    assert c(1.5) == 1.0 and c(2.0) == 0.0
    assert c(1.75) == pytest.approx(0.5, abs=1e-15)
    assert c(1.0) == 1.0 and c(2.5) == 0.0
    up = Cutoff(1.5, 2.0, "increasing")
    r = np.linspace(1.0, 2.5, 31)
    assert np.allclose(c(r) + up(r), 1.0, atol=1e-15)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.0, 1.0))
def test_smoothstep_symmetry_and_range(t):
    s = smoothstep(t)
    assert 0.0 <= s <= 1.0
    assert s + smoothstep(1.0 - t) == pytest.approx(1.0, abs=1e-14)


def test_smoothstep_is_c2_at_ends():
    eps = 1e-4
    for t0 in (0.0, 1.0):
        d1 = (smoothstep(t0 + eps) - smoothstep(t0 - eps)) / (2 * eps)
        d2 = (smoothstep(t0 + eps) - 2 * smoothstep(t0) + smoothstep(t0 - eps)) / eps**2
        assert abs(d1) < 1e-7 and abs(d2) < 1e-3


def test_cutoff_bad_arguments():
    with pytest.raises(MetricError):
        Cutoff(2.0, 1.5)
    with pytest.raises(MetricError):
        Cutoff(1.0, 2.0, "sideways")


def test_degenerate_blend_is_exact():
    g = build_annulus(0.05, 0.5, 17, 32)
    cusp = cusp_metric(g)
    flat = flat_metric(g)
    blended = blend_metrics([(cusp, Cutoff(10.0, 11.0, "decreasing"))], (flat, Cutoff(10.0, 11.0, "increasing")))
    assert np.array_equal(blended.h, cusp.h)


def test_example_blend_regions():
    g = build_annulus(1.0, 3.0, 81, 32)
    m = example_blend(g)
    r, _ = g.mesh()
    inner, outer = r <= 1.5, r >= 2.0
    assert np.array_equal(m.h[inner], paper4_factor(g).h[inner])
    assert np.all(m.h[outer] == 1.0)
    assert np.all(m.h > 0)


def test_blend_locality_curvature():
    g = build_annulus(1.0, 3.0, 81, 32)
    m = example_blend(g)
    p4 = paper4_factor(g)
    r = g.c1
    # nodes whose whole 3-point radial stencil sits on a plateau
    in_core = np.zeros(g.shape, bool)
    in_flat = np.zeros(g.shape, bool)
    for i in range(1, g.n1 - 1):
        in_core[i] = r[i + 1] <= 1.5
        in_flat[i] = r[i - 1] >= 2.0
    assert in_core.any() and in_flat.any()
    assert np.array_equal(m.K0[in_core], p4.K0[in_core])
    assert np.all(m.K0[in_flat] == 0.0)


def test_blend_requires_shared_grid():
    a = cusp_metric(build_annulus(0.05, 0.5, 17, 32))
    b = flat_metric(build_annulus(0.05, 0.5, 19, 32))
    with pytest.raises(ValueError):
        blend_metrics([(a, Cutoff(0.2, 0.3))], (b, Cutoff(0.2, 0.3, "increasing")))


def test_cutoff_eval_vectorized():
    c = Cutoff(1.0, 2.0, "increasing")
    r = np.array([0.5, 1.0, 1.5, 2.0, 3.0])
    assert np.allclose(cutoff_eval(c, r), [0, 0, 0.5, 1, 1])
