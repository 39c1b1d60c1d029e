"""Conformal metrics ``h |dz|^2`` and their Gaussian curvature.

Curvature of a conformal factor is computed from the identity
``K = -lap(log h) / (2 h)``. The orthogonal-coordinates formula for
``E dr^2 + G dtheta^2`` is kept as an independent cross-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Tuple

import numpy as np

from .mesh import Grid, GridError, flat_laplacian


class MetricError(ValueError):
    """Raised for non-positive conformal factors or bad metric parameters."""


def _first_bad_node(mask: np.ndarray, grid: Grid) -> str:
    i, j = np.argwhere(mask)[0]
    return f"node ({i}, {j}) at coordinates ({grid.c1[i]:.6g}, {grid.c2[j]:.6g})"


def curvature_conformal(h: np.ndarray, grid: Grid) -> np.ndarray:
    """Gaussian curvature of ``h |dz|^2``; boundary rows are one-sided."""
    h = grid.check(h, "h")
    bad = ~(h > 0)
    if bad.any():
        raise MetricError(f"conformal factor not positive at {_first_bad_node(bad, grid)}")
    return -flat_laplacian(np.log(h), grid) / (2.0 * h)


@dataclass(frozen=True)
class ConformalMetric:
    grid: Grid
    h: np.ndarray = field(repr=False)
    K0: np.ndarray = field(repr=False)
    area_weights: np.ndarray = field(repr=False)

    @property
    def area(self) -> float:
        """``mu(M) = int 1 dmu``."""
        return float(np.sum(self.area_weights * self.grid.quad_weights))

    @property
    def dmu(self) -> np.ndarray:
        """Nodal quadrature weight times area element (``int f dmu = sum f * dmu``)."""
        return self.area_weights * self.grid.quad_weights

    def scaled(self, c: float) -> "ConformalMetric":
        return from_factor(self.grid, c * self.h)


def from_factor(grid: Grid, h: np.ndarray) -> ConformalMetric:
    h = np.array(grid.check(h, "h"), dtype=float)
    bad = ~(h > 0) | ~np.isfinite(h)
    if bad.any():
        raise MetricError(f"conformal factor not positive at {_first_bad_node(bad, grid)}")
    K0 = curvature_conformal(h, grid)
    weights = h * grid.flat_area
    for a in (h, K0, weights):
        a.setflags(write=False)
    return ConformalMetric(grid, h, K0, weights)


def flat_metric(grid: Grid) -> ConformalMetric:
    return from_factor(grid, np.ones(grid.shape))


def _require_annulus(grid: Grid, r_max: float, what: str):
    if not grid.is_annulus:
        raise MetricError(f"{what} needs an annulus grid")
    if grid.r_out >= r_max:
        raise MetricError(f"{what} needs r_out < {r_max}, got {grid.r_out}")


def cusp_factor(r):
    """Complete curvature -1 factor near a puncture: ``(r log(1/r))^-2``."""
    return (r * np.log(1.0 / r)) ** -2


def cusp_metric(grid: Grid) -> ConformalMetric:
    _require_annulus(grid, 1.0, "cusp metric")
    r, _ = grid.mesh()
    return from_factor(grid, cusp_factor(r))


def poincare_metric(grid: Grid) -> ConformalMetric:
    """Poincare disc factor ``4 / (1 - r^2)^2``."""
    _require_annulus(grid, 1.0, "Poincare metric")
    r, _ = grid.mesh()
    return from_factor(grid, 4.0 / (1.0 - r**2) ** 2)


def log_factor(r):
    """``-log(r/4)``, the example factor with a true singularity at r = 0."""
    return -np.log(r / 4.0)


def paper4_factor(grid: Grid) -> ConformalMetric:
    _require_annulus(grid, 4.0, "log(4/r) metric")
    r, _ = grid.mesh()
    return from_factor(grid, log_factor(r))


# -- orthogonal coordinates -------------------------------------------------------

@dataclass(frozen=True)
class OrthogonalMetric:
    """``E dr^2 + G dtheta^2`` on an annulus."""

    grid: Grid
    E: np.ndarray = field(repr=False)
    G: np.ndarray = field(repr=False)

    def __post_init__(self):
        if not self.grid.is_annulus:
            raise MetricError("orthogonal metrics live on annulus grids")
        for name in ("E", "G"):
            a = self.grid.check(getattr(self, name), name)
            bad = ~(a > 0)
            if bad.any():
                raise MetricError(f"{name} not positive at {_first_bad_node(bad, self.grid)}")

    @classmethod
    def from_conformal(cls, m: ConformalMetric) -> "OrthogonalMetric":
        r, _ = m.grid.mesh()
        return cls(m.grid, np.array(m.h), r**2 * m.h)


_D4_EDGE = (
    np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / 12.0,
    np.array([-3.0, -10.0, 18.0, -6.0, 1.0]) / 12.0,
)


def _d4_axis0(f, d):
    """Fourth-order first derivative along axis 0 (one-sided in the two end rows)."""
    out = np.empty_like(f)
    out[2:-2] = (f[:-4] - 8.0 * f[1:-3] + 8.0 * f[3:-1] - f[4:]) / (12.0 * d)
    for k, c in enumerate(_D4_EDGE):
        out[k] = np.tensordot(c, f[:5], axes=1) / d
        out[-1 - k] = -np.tensordot(c, f[:-6:-1], axes=1) / d
    return out


def _d4_periodic(f, d):
    roll = lambda s: np.roll(f, s, axis=1)
    return (roll(2) - 8.0 * roll(1) + 8.0 * roll(-1) - roll(-2)) / (12.0 * d)


def curvature_orthogonal(m: OrthogonalMetric, sign: str = "conventional") -> np.ndarray:
    """Curvature of ``E dr^2 + G dtheta^2``.

    ``K = -1/(2 sqrt(EG)) [ (E_theta/sqrt(EG))_theta + (G_r/sqrt(EG))_r ]``.
    ``sign="paper"`` drops the leading minus, reproducing the formula as it is
    sometimes printed; the two differ only in sign.

    Derivatives are fourth order, so this serves as an independent
    cross-check of the second-order conformal stencil.
    """
    if sign not in ("conventional", "paper"):
        raise ValueError(f"sign must be 'conventional' or 'paper', got {sign!r}")
    grid = m.grid
    E, G = np.asarray(m.E, float), np.asarray(m.G, float)
    root = np.sqrt(E * G)
    div_r = _d4_axis0(_d4_axis0(G, grid.d1) / root, grid.d1)
    div_t = _d4_periodic(_d4_periodic(E, grid.d2) / root, grid.d2)
    bracket = (div_t + div_r) / (2.0 * root)
    return -bracket if sign == "conventional" else bracket


# -- cutoffs and blending --------------------------------------------------------

def smoothstep(t):
    """Quintic ``6t^5 - 15t^4 + 10t^3`` clipped to [0, 1]; C2 at both ends."""
    t = np.clip(t, 0.0, 1.0)
    return np.clip(t**3 * (t * (6.0 * t - 15.0) + 10.0), 0.0, 1.0)


@dataclass(frozen=True)
class Cutoff:
    a: float
    b: float
    orientation: str = "decreasing"

    def __post_init__(self):
        if not (0 < self.a < self.b):
            raise MetricError(f"cutoff needs 0 < a < b, got a={self.a}, b={self.b}")
        if self.orientation not in ("decreasing", "increasing"):
            raise MetricError(f"unknown cutoff orientation {self.orientation!r}")

    def __call__(self, r):
        return cutoff_eval(self, r)


def cutoff_eval(c: Cutoff, r):
    s = smoothstep((np.asarray(r, dtype=float) - c.a) / (c.b - c.a))
    return 1.0 - s if c.orientation == "decreasing" else s


def blend_metrics(
    pieces: Sequence[Tuple[ConformalMetric, Cutoff]],
    background: Tuple[ConformalMetric, Cutoff],
) -> ConformalMetric:
    """``h = sum rho_i f_i + rho_bg h_bg`` with radial cutoffs."""
    bg_metric, bg_cut = background
    grid = bg_metric.grid
    r, _ = grid.mesh()
    h = np.zeros(grid.shape)
    for metric, cut in pieces:
        if metric.grid != grid:
            raise GridError("all blended metrics must share one grid")
        h = h + cutoff_eval(cut, r) * metric.h
    h = h + cutoff_eval(bg_cut, r) * bg_metric.h
    bad = ~(h > 0)
    if bad.any():
        raise MetricError(f"blended factor not positive at {_first_bad_node(bad, grid)}")
    return from_factor(grid, h)


def example_blend(grid: Grid, a: float = 1.5, b: float = 2.0) -> ConformalMetric:
    """``log(4/r)`` near the puncture blended into the flat metric between a and b."""
    return blend_metrics(
        [(paper4_factor(grid), Cutoff(a, b, "decreasing"))],
        (flat_metric(grid), Cutoff(a, b, "increasing")),
    )


def iter_metric_kinds() -> Iterable[str]:
    return ("flat", "cusp", "poincare", "paper4", "blend")
