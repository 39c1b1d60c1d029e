"""Logically rectangular grids, finite-difference stencils and quadrature.

Two coordinate domains are supported:

* ``annulus``: polar coordinates ``(r, theta)`` with ``r_in <= r <= r_out`` and
  periodic ``theta`` sampled at ``k * 2*pi / n_theta`` (no duplicated seam node).
* ``rectangle``: Cartesian ``[0, lx] x [0, ly]``.

Scalar fields are plain ``numpy`` arrays of shape ``grid.shape``; axis 0 is
``r`` (or ``x``), axis 1 is ``theta`` (or ``y``).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, Tuple

import numpy as np
from scipy import sparse

MIN_NODES = 9
MIN_THETA = 8


class GridError(ValueError):
    """Invalid grid parameters or mismatched fields."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class Grid:
    kind: str
    a: float
    b: float
    n1: int
    n2: int
    # derived, filled in __post_init__
    c1: np.ndarray = field(init=False, repr=False, compare=False)
    c2: np.ndarray = field(init=False, repr=False, compare=False)
    d1: float = field(init=False, compare=False)
    d2: float = field(init=False, compare=False)

    def __post_init__(self):
        if self.kind == "annulus":
            c1 = np.linspace(self.a, self.b, self.n1)
            c2 = 2.0 * np.pi * np.arange(self.n2) / self.n2
            d2 = 2.0 * np.pi / self.n2
        elif self.kind == "rectangle":
            c1 = np.linspace(0.0, self.a, self.n1)
            c2 = np.linspace(0.0, self.b, self.n2)
            d2 = self.b / (self.n2 - 1)
        else:
            raise GridError(f"unknown grid kind {self.kind!r}")
        d1 = (self.b - self.a) / (self.n1 - 1) if self.kind == "annulus" else self.a / (self.n1 - 1)
        for name, value in (("c1", c1), ("c2", c2), ("d1", d1), ("d2", d2)):
            object.__setattr__(self, name, value)

    # -- geometry -----------------------------------------------------------
    @property
    def shape(self) -> Tuple[int, int]:
        return (self.n1, self.n2)

    @property
    def size(self) -> int:
        return self.n1 * self.n2

    @property
    def is_annulus(self) -> bool:
        return self.kind == "annulus"

    @property
    def r_in(self) -> float:
        return self.a

    @property
    def r_out(self) -> float:
        return self.b

    def mesh(self) -> Tuple[np.ndarray, np.ndarray]:
        """Nodal coordinate arrays ``(c1, c2)`` broadcast to ``shape``."""
        return np.meshgrid(self.c1, self.c2, indexing="ij")

    def cartesian(self) -> Tuple[np.ndarray, np.ndarray]:
        """Nodal ``(x, y)`` coordinates."""
        u, v = self.mesh()
        if self.is_annulus:
            return u * np.cos(v), u * np.sin(v)
        return u, v

    @cached_property
    def boundary(self) -> np.ndarray:
        mask = np.zeros(self.shape, dtype=bool)
        mask[0, :] = mask[-1, :] = True
        if not self.is_annulus:
            mask[:, 0] = mask[:, -1] = True
        return _frozen(mask)

    @cached_property
    def interior(self) -> np.ndarray:
        return _frozen(~self.boundary)

    @property
    def n_interior(self) -> int:
        return int(self.interior.sum())

    @cached_property
    def flat_area(self) -> np.ndarray:
        """Flat area element: ``r`` on the annulus, ``1`` on the rectangle."""
        if self.is_annulus:
            return _frozen(np.broadcast_to(self.c1[:, None], self.shape).copy())
        return _frozen(np.ones(self.shape))

    @cached_property
    def quad_weights(self) -> np.ndarray:
        """Tensor trapezoid weights (rectangle rule in periodic theta)."""
        w1 = np.full(self.n1, self.d1)
        w1[[0, -1]] *= 0.5
        w2 = np.full(self.n2, self.d2)
        if not self.is_annulus:
            w2[[0, -1]] *= 0.5
        return _frozen(np.outer(w1, w2))

    def distance_to_boundary(self) -> np.ndarray:
        """Coordinate distance of every node to the nearest boundary component."""
        u, v = self.mesh()
        if self.is_annulus:
            return np.minimum(u - self.a, self.b - u)
        return np.minimum.reduce([u, self.a - u, v, self.b - v])

    def boundary_distances(self) -> Dict[str, np.ndarray]:
        """Distance to each boundary component separately."""
        u, v = self.mesh()
        if self.is_annulus:
            return {"inner": u - self.a, "outer": self.b - u}
        return {"left": u, "right": self.a - u, "bottom": v, "top": self.b - v}

    def spec(self) -> dict:
        """Serializable description, accepted by :func:`grid_from_spec`."""
        if self.is_annulus:
            return {"kind": "annulus", "r_in": self.a, "r_out": self.b,
                    "n_r": self.n1, "n_theta": self.n2}
        return {"kind": "rectangle", "lx": self.a, "ly": self.b,
                "nx": self.n1, "ny": self.n2}

    def check(self, f: np.ndarray, name: str = "field") -> np.ndarray:
        f = np.asarray(f, dtype=float)
        if f.shape != self.shape:
            raise GridError(f"{name} has shape {f.shape}, grid expects {self.shape}")
        return f


def build_annulus(r_in: float, r_out: float, n_r: int, n_theta: int) -> Grid:
    if not (r_in > 0 and r_out > r_in):
        raise GridError(f"need 0 < r_in < r_out, got r_in={r_in}, r_out={r_out}")
    if n_r < MIN_NODES:
        raise GridError(f"n_r={n_r} below minimum {MIN_NODES}")
    if n_theta < MIN_THETA:
        raise GridError(f"n_theta={n_theta} below minimum {MIN_THETA}")
    return Grid("annulus", float(r_in), float(r_out), int(n_r), int(n_theta))


def build_rectangle(lx: float, ly: float, nx: int, ny: int) -> Grid:
    if not (lx > 0 and ly > 0):
        raise GridError(f"side lengths must be positive, got lx={lx}, ly={ly}")
    if nx < MIN_NODES or ny < MIN_NODES:
        raise GridError(f"nx={nx}, ny={ny}: counts below minimum {MIN_NODES}")
    return Grid("rectangle", float(lx), float(ly), int(nx), int(ny))


def grid_from_spec(spec: dict) -> Grid:
    kind = spec.get("kind")
    if kind == "annulus":
        return build_annulus(spec["r_in"], spec["r_out"], spec["n_r"], spec["n_theta"])
    if kind == "rectangle":
        return build_rectangle(spec["lx"], spec["ly"], spec["nx"], spec["ny"])
    raise GridError(f"unknown grid kind {kind!r}")


# -- differential operators ---------------------------------------------------

def _face_radii(grid: Grid) -> np.ndarray:
    r = grid.c1
    return grid.d1 / np.log(r[1:] / r[:-1])


def _second_axis0(f, d):
    """Second derivative along axis 0: centered inside, one-sided at the ends."""
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - 2.0 * f[1:-1] + f[:-2]) / d**2
    out[0] = (2.0 * f[0] - 5.0 * f[1] + 4.0 * f[2] - f[3]) / d**2
    out[-1] = (2.0 * f[-1] - 5.0 * f[-2] + 4.0 * f[-3] - f[-4]) / d**2
    return out


def _first_axis0(f, d):
    out = np.empty_like(f)
    out[1:-1] = (f[2:] - f[:-2]) / (2.0 * d)
    out[0] = (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * d)
    out[-1] = (3.0 * f[-1] - 4.0 * f[-2] + f[-3]) / (2.0 * d)
    return out


def flat_laplacian(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Flat Laplacian with second-order centered differences.

    On the annulus the radial part is the conservative form
    ``(1/r) d/dr (r df/dr)`` with log-mean face radii
    ``dr / log(r_{i+1}/r_i)``, which is exact on ``log r`` and keeps
    ``r * lap`` symmetric. Boundary rows use second-order one-sided
    differences; solvers never read them (see ``grid.boundary``).
    """
    f = grid.check(f)
    if grid.is_annulus:
        r = grid.c1[:, None]
        out = np.empty_like(f)
        face_flux = _face_radii(grid)[:, None] * np.diff(f, axis=0) / grid.d1**2
        out[1:-1] = (face_flux[1:] - face_flux[:-1]) / r[1:-1]
        edge = _second_axis0(f, grid.d1) + _first_axis0(f, grid.d1) / r
        out[[0, -1]] = edge[[0, -1]]
        f_tt = (np.roll(f, -1, axis=1) - 2.0 * f + np.roll(f, 1, axis=1)) / grid.d2**2
        return out + f_tt / r**2
    return _second_axis0(f, grid.d1) + _second_axis0(f.T, grid.d2).T


def gradient(f: np.ndarray, grid: Grid) -> Tuple[np.ndarray, np.ndarray]:
    """Cartesian gradient ``(f_x, f_y)`` by centered differences.

    On the annulus the polar derivatives are converted with the chain rule.
    """
    f = grid.check(f)
    g1 = _first_axis0(f, grid.d1)
    if grid.is_annulus:
        g2 = (np.roll(f, -1, axis=1) - np.roll(f, 1, axis=1)) / (2.0 * grid.d2)
        r, t = grid.mesh()
        c, s = np.cos(t), np.sin(t)
        return c * g1 - s * g2 / r, s * g1 + c * g2 / r
    return g1, _first_axis0(f.T, grid.d2).T


def dirichlet_energy(f: np.ndarray, grid: Grid) -> float:
    """Edge-based discrete ``int |grad f|^2 dA_flat``.

    For ``f`` vanishing on the boundary this equals ``-sum q * area * f * lap(f)``
    exactly (summation by parts of the interior stencil).
    """
    f = grid.check(f)
    if grid.is_annulus:
        r = grid.c1
        e_r = np.sum(_face_radii(grid)[:, None] * np.diff(f, axis=0) ** 2) / grid.d1**2
        dt = np.roll(f, -1, axis=1) - f
        e_t = np.sum((dt[1:-1] ** 2) / r[1:-1, None]) / grid.d2**2
        return float((e_r + e_t) * grid.d1 * grid.d2)
    e_x = np.sum(np.diff(f, axis=0)[:, 1:-1] ** 2) / grid.d1**2
    e_y = np.sum(np.diff(f, axis=1)[1:-1, :] ** 2) / grid.d2**2
    return float((e_x + e_y) * grid.d1 * grid.d2)


def laplacian_matrix(grid: Grid) -> sparse.csr_matrix:
    """Sparse matrix of the interior flat stencil acting on interior unknowns.

    Rows and columns follow ``np.flatnonzero(grid.interior)``; boundary values
    are taken as zero.
    """
    idx = -np.ones(grid.shape, dtype=np.int64)
    inner = grid.interior
    idx[inner] = np.arange(inner.sum())
    rows, cols, vals = [], [], []
    i_all, j_all = np.nonzero(inner)
    d1, d2 = grid.d1, grid.d2

    def add(ii, jj, v):
        target = idx[ii, jj]
        keep = target >= 0
        rows.append(idx[i_all, j_all][keep])
        cols.append(target[keep])
        vals.append(np.broadcast_to(v, i_all.shape)[keep])

    if grid.is_annulus:
        r = grid.c1[i_all]
        face = _face_radii(grid)
        up, down = face[i_all] / (r * d1**2), face[i_all - 1] / (r * d1**2)
        n2 = grid.n2
        add(i_all, j_all, -up - down - 2.0 / (r**2 * d2**2))
        add(i_all + 1, j_all, up)
        add(i_all - 1, j_all, down)
        add(i_all, (j_all + 1) % n2, 1.0 / (r**2 * d2**2))
        add(i_all, (j_all - 1) % n2, 1.0 / (r**2 * d2**2))
    else:
        add(i_all, j_all, np.full(i_all.shape, -2.0 / d1**2 - 2.0 / d2**2))
        add(i_all + 1, j_all, np.full(i_all.shape, 1.0 / d1**2))
        add(i_all - 1, j_all, np.full(i_all.shape, 1.0 / d1**2))
        add(i_all, j_all + 1, np.full(i_all.shape, 1.0 / d2**2))
        add(i_all, j_all - 1, np.full(i_all.shape, 1.0 / d2**2))
    n = int(inner.sum())
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )


# -- quadrature ---------------------------------------------------------------

def integrate(f: np.ndarray, area_weights: np.ndarray, grid: Grid) -> float:
    """``int f dmu`` with ``dmu = area_weights * dr dtheta`` (or ``dx dy``)."""
    f = grid.check(f)
    w = grid.check(area_weights, "area_weights")
    if np.any(w < 0):
        raise GridError("area weights must be non-negative")
    return float(np.sum(f * w * grid.quad_weights))


def inner_product(f: np.ndarray, g: np.ndarray, area_weights: np.ndarray, grid: Grid) -> float:
    return integrate(grid.check(f) * grid.check(g), area_weights, grid)


def boundary_length_weights(grid: Grid) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """Per boundary component: node indices and flat line-element weights.

    Rectangle corners belong to the left/right edges so every boundary node is
    listed exactly once; their share of the horizontal edges is dropped, so line
    integrals on the rectangle are first order at the corners (use :func:`flux`
    for the normal-derivative integral).
    """
    n1, n2 = grid.shape
    if grid.is_annulus:
        j = np.arange(n2)
        return {
            "inner": ((np.zeros(n2, int), j), np.full(n2, grid.a * grid.d2)),
            "outer": ((np.full(n2, n1 - 1), j), np.full(n2, grid.b * grid.d2)),
        }
    wy = np.full(n2, grid.d2)
    wy[[0, -1]] *= 0.5
    wx = np.full(n1 - 2, grid.d1)
    j = np.arange(n2)
    i = np.arange(1, n1 - 1)
    return {
        "left": ((np.zeros(n2, int), j), wy),
        "right": ((np.full(n2, n1 - 1), j), wy.copy()),
        "bottom": ((i, np.zeros(n1 - 2, int)), wx),
        "top": ((i, np.full(n1 - 2, n2 - 1)), wx.copy()),
    }


def flux(f: np.ndarray, grid: Grid) -> float:
    """``oint d_nu f dl`` with per-edge trapezoid rules (corners on every edge)."""
    f = grid.check(f)
    g1 = _first_axis0(f, grid.d1)
    if grid.is_annulus:
        return float(np.sum(grid.b * g1[-1] - grid.a * g1[0]) * grid.d2)
    g2 = _first_axis0(f.T, grid.d2).T
    wy = np.full(grid.n2, grid.d2)
    wy[[0, -1]] *= 0.5
    wx = np.full(grid.n1, grid.d1)
    wx[[0, -1]] *= 0.5
    return float(np.sum((g1[-1] - g1[0]) * wy) + np.sum((g2[:, -1] - g2[:, 0]) * wx))


@dataclass
class BoundaryTrace:
    """Values attached to boundary nodes, grouped by component."""

    grid: Grid
    components: Dict[str, Tuple[Tuple[np.ndarray, np.ndarray], np.ndarray]]

    def max_abs(self) -> float:
        return max(float(np.max(np.abs(v))) for _, v in self.components.values())

    def as_field(self) -> np.ndarray:
        out = np.zeros(self.grid.shape)
        for (i, j), v in self.components.values():
            out[i, j] = v
        return out

    def line_integral(self) -> float:
        """``oint value dl`` over all components (flat line element)."""
        weights = boundary_length_weights(self.grid)
        return float(sum(np.sum(v * weights[name][1]) for name, (_, v) in self.components.items()))


def restrict_to_boundary(f: np.ndarray, grid: Grid) -> BoundaryTrace:
    f = grid.check(f)
    comps = {name: (ij, f[ij]) for name, (ij, _) in boundary_length_weights(grid).items()}
    return BoundaryTrace(grid, comps)


def normal_derivative(f: np.ndarray, grid: Grid) -> BoundaryTrace:
    """Outward normal derivative at boundary nodes (one-sided, second order)."""
    f = grid.check(f)
    d1 = _first_axis0(f, grid.d1)
    comps = {}
    for name, (ij, _) in boundary_length_weights(grid).items():
        i, j = ij
        if name in ("inner", "left"):
            vals = -d1[i, j]
        elif name in ("outer", "right"):
            vals = d1[i, j]
        else:
            d2 = _first_axis0(f.T, grid.d2).T
            vals = -d2[i, j] if name == "bottom" else d2[i, j]
        comps[name] = (ij, vals)
    return BoundaryTrace(grid, comps)
