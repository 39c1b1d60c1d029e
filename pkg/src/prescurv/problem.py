"""Curvature transformation law, the residual ``b`` and the functional ``S``.

For ``sigma`` vanishing on the boundary, the metric ``e^sigma h |dz|^2`` has
curvature ``e^-sigma (K0 - lap_h(sigma)/2)`` and

    S[sigma] = int (K(sigma) - K)^2 e^{2 sigma} dmu = int b^2 dmu,
    b = K0 - lap_h(sigma)/2 - K e^sigma.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .mesh import flat_laplacian
from .metric import ConformalMetric, _first_bad_node, smoothstep

BOUNDARY_TOL = 1e-12
COLLAR_TOL = 1e-14


class TargetError(ValueError):
    """The prescribed curvature is not admissible."""


@dataclass(frozen=True)
class CurvatureProblem:
    metric: ConformalMetric
    K: np.ndarray = field(repr=False)
    collar_width: float = 0.0

    def __post_init__(self):
        grid = self.metric.grid
        K = np.array(grid.check(self.K, "K"), dtype=float)
        K.setflags(write=False)
        object.__setattr__(self, "K", K)
        if self.collar_width < 0:
            raise TargetError(f"collar_width must be >= 0, got {self.collar_width}")
        bad = ~(K < 0)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise TargetError(
                f"target curvature must be negative; K = {K[i, j]:.6g} at {_first_bad_node(bad, grid)}"
            )
        edge_K0 = self.metric.K0[grid.boundary]
        if not np.all(edge_K0 < 0):
            raise TargetError(f"background curvature must be negative on the boundary "
                              f"(max {edge_K0.max():.6g})")
        collar = self.collar_mask
        off = np.abs(K - self.metric.K0) > COLLAR_TOL
        if np.any(off & collar):
            raise TargetError(
                f"K differs from K0 inside the collar at {_first_bad_node(off & collar, grid)}"
            )

    @property
    def grid(self):
        return self.metric.grid

    @property
    def collar_mask(self) -> np.ndarray:
        d = self.grid.distance_to_boundary()
        return d <= self.collar_width * (1.0 + 1e-12)

    @property
    def min_abs_K(self) -> float:
        return float(np.min(np.abs(self.K)))


@dataclass(frozen=True)
class Residual:
    b: np.ndarray = field(repr=False)
    S: float
    b_l2: float


def laplace_beltrami(f: np.ndarray, m: ConformalMetric) -> np.ndarray:
    return flat_laplacian(f, m.grid) / m.h


def curvature_of(sigma: np.ndarray, m: ConformalMetric) -> np.ndarray:
    """Curvature of ``e^sigma h |dz|^2``."""
    sigma = m.grid.check(sigma, "sigma")
    return np.exp(-sigma) * (m.K0 - 0.5 * laplace_beltrami(sigma, m))


def _check_boundary(sigma: np.ndarray, p: CurvatureProblem) -> np.ndarray:
    sigma = p.grid.check(sigma, "sigma")
    edge = np.abs(sigma[p.grid.boundary])
    if edge.size and edge.max() > BOUNDARY_TOL:
        raise ValueError(f"sigma must vanish on the boundary (max |sigma| = {edge.max():.3g})")
    return sigma


def residual_b(sigma: np.ndarray, p: CurvatureProblem) -> Residual:
    """``b`` on interior nodes; on the boundary ``b = K0 - K`` (zero for valid problems)."""
    sigma = _check_boundary(sigma, p)
    m = p.metric
    b = m.K0 - 0.5 * laplace_beltrami(sigma, m) - p.K * np.exp(sigma)
    edge = p.grid.boundary
    b[edge] = (m.K0 - p.K)[edge]
    S = float(np.sum(b * b * m.dmu))
    return Residual(b, S, float(np.sqrt(S)))


def functional_S(sigma: np.ndarray, p: CurvatureProblem) -> float:
    """``int (K(sigma) - K)^2 e^{2 sigma} dmu`` over the interior.

    Boundary nodes contribute ``(K0 - K)^2``, the same convention as
    :func:`residual_b` (boundary stencils are not trusted).
    """
    sigma = _check_boundary(sigma, p)
    m = p.metric
    integrand = (curvature_of(sigma, m) - p.K) ** 2 * np.exp(2.0 * sigma)
    edge = p.grid.boundary
    integrand[edge] = ((m.K0 - p.K) ** 2)[edge]
    return float(np.sum(integrand * m.dmu))


def newton_operator(sigma: np.ndarray, p: CurvatureProblem) -> Callable[[np.ndarray], np.ndarray]:
    """``u -> -lap_h(u)/2 - K e^sigma u`` on interior fields (boundary output zeroed).

    Self-adjoint and positive definite in ``L2(dmu)`` because ``K < 0``.
    """
    m = p.metric
    potential = -p.K * np.exp(sigma)
    edge = p.grid.boundary

    def apply(u):
        out = -0.5 * laplace_beltrami(u, m) + potential * u
        out[edge] = 0.0
        return out

    return apply


def gradient_S(sigma: np.ndarray, p: CurvatureProblem, res: Optional[Residual] = None) -> np.ndarray:
    """``L2(dmu)`` gradient of ``S``: ``-lap_h(b) - 2 K e^sigma b`` on the interior.

    Exact for the discrete functional because ``r * lap`` is symmetric on
    interior fields.
    """
    if res is None:
        res = residual_b(sigma, p)
    b = np.array(res.b)
    edge = p.grid.boundary
    b[edge] = 0.0
    return 2.0 * newton_operator(sigma, p)(b)


def collar_weight(grid, collar_width: float) -> np.ndarray:
    """C2 weight: 0 within ``collar_width`` of the boundary, 1 beyond twice that.

    A product of one ramp per boundary component, so it stays C2 where ramps
    from different components overlap.
    """
    chi = np.ones(grid.shape)
    for d in grid.boundary_distances().values():
        if collar_width == 0:
            chi = chi * (d > 0)
        else:
            chi = chi * smoothstep((d - collar_width) / collar_width)
    return chi


def blend_target(
    metric: ConformalMetric,
    collar_width: float,
    *,
    scale: Optional[float] = None,
    offset: Optional[float] = None,
    field: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Target ``K = K0 + chi (K_inner - K0)`` agreeing with ``K0`` on the collar.

    Exactly one of ``scale`` (``K_inner = c K0``), ``offset``
    (``K_inner = K0 + d``) or ``field`` must be given.
    """
    grid = metric.grid
    given = [x is not None for x in (scale, offset, field)]
    if sum(given) != 1:
        raise TargetError("give exactly one of scale, offset, field")
    extent = (grid.b - grid.a) if grid.is_annulus else min(grid.a, grid.b)
    if not (0 <= collar_width < 0.5 * extent):
        raise TargetError(f"collar_width must lie in [0, {0.5 * extent:.6g}), got {collar_width}")
    K0 = metric.K0
    if scale is not None:
        if not scale > 0:
            raise TargetError(f"scale must be positive, got {scale}")
        inner = scale * K0
    elif offset is not None:
        inner = K0 + offset
    else:
        inner = grid.check(field, "target field")
    chi = collar_weight(grid, collar_width)
    K = K0 + chi * (inner - K0)
    bad = ~(K < 0)
    if bad.any():
        i, j = np.argwhere(bad)[0]
        raise TargetError(f"target curvature K = {K[i, j]:.6g} >= 0 at {_first_bad_node(bad, grid)}")
    return K


def manufactured_target(sigma_star: np.ndarray, metric: ConformalMetric) -> np.ndarray:
    """Target whose discrete solution is exactly ``sigma_star`` (boundary keeps K0)."""
    K = curvature_of(sigma_star, metric)
    edge = metric.grid.boundary
    K[edge] = metric.K0[edge]
    return K
