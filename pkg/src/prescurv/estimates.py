"""Runtime diagnostics for the a-priori bound on ``int (lap_h sigma)^2 dmu``.

Along a minimizing sequence the integral ``int K^2 e^{2 sigma} + lap_h(sigma)
e^sigma K dmu`` is split over three node sets

    Omega_1: |d_z sigma| >  |g|
    Omega_2: |d_z sigma| <= |g|  and  |K| e^sigma >  |g|^2
    Omega_3: |d_z sigma| <= |g|  and  |K| e^sigma <= |g|^2

with ``g = d_zbar K / |K|``. The pieces over Omega_1 and Omega_2 should be
non-negative and the Omega_3 piece bounded by ``3 D^2 = 3 max|g|^4 mu(M)``,
which caps ``int (lap_h sigma)^2 dmu`` by ``4 (C^2 + 3 D^2)``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .mesh import boundary_length_weights, gradient, normal_derivative
from .problem import CurvatureProblem, TargetError, laplace_beltrami, residual_b


def g_field(K: np.ndarray, grid) -> np.ndarray:
    """``g = d_zbar K / |K|`` with ``d_zbar = (d_x + i d_y) / 2``."""
    K = grid.check(K, "K")
    if not np.all(K < 0):
        i, j = np.argwhere(~(K < 0))[0]
        raise TargetError(f"g needs K < 0 everywhere; K = {K[i, j]:.6g} at node ({i}, {j})")
    kx, ky = gradient(K, grid)
    return 0.5 * (kx + 1j * ky) / np.abs(K)


def dz(sigma: np.ndarray, grid) -> np.ndarray:
    """``d_z sigma = (sigma_x - i sigma_y) / 2``; ``|d_z sigma| = |grad sigma| / 2``."""
    sx, sy = gradient(sigma, grid)
    return 0.5 * (sx - 1j * sy)


def omega_partition(sigma: np.ndarray, K: np.ndarray, grid) -> np.ndarray:
    """Labels 1, 2, 3 on interior nodes (0 on the boundary)."""
    g_abs = np.abs(g_field(K, grid))
    dz_abs = np.abs(dz(sigma, grid))
    big = np.abs(K) * np.exp(sigma) > g_abs**2
    labels = np.where(dz_abs > g_abs, 1, np.where(big, 2, 3))
    labels[grid.boundary] = 0
    return labels


@dataclass
class EstimateReport:
    B1: float
    B2: float
    B3: float
    D2: float
    eps_q: float
    bound_ok: bool
    B1_ok: bool
    B2_ok: bool
    laplacian_energy: float
    C_proxy: float
    energy_bound: float
    energy_ok: bool
    identity_residual: float
    boundary_term: float
    partition_sizes: tuple

    @property
    def ok(self) -> bool:
        return self.B1_ok and self.B2_ok and self.bound_ok and self.energy_ok

    def as_dict(self) -> dict:
        d = asdict(self)
        d["partition_sizes"] = list(self.partition_sizes)
        d["ok"] = self.ok
        return d


def b_terms_report(sigma: np.ndarray, p: CurvatureProblem) -> EstimateReport:
    grid, m = p.grid, p.metric
    inner = grid.interior
    dmu = np.where(inner, m.dmu, 0.0)
    K = p.K
    es = np.exp(sigma)
    lap = laplace_beltrami(sigma, m)
    integrand = K**2 * es**2 + lap * es * K
    labels = omega_partition(sigma, K, grid)
    B = [float(np.sum(np.where(labels == i, integrand, 0.0) * dmu)) for i in (1, 2, 3)]
    total = float(np.sum(integrand * dmu))
    mu = m.area
    g_max = float(np.max(np.abs(g_field(K, grid))[inner]))
    D2 = g_max**4 * mu
    eps_q = 1e-10 * mu

    S = residual_b(sigma, p).S
    C = np.sqrt(S) + np.sqrt(float(np.sum(m.K0**2 * m.dmu)))
    lap_energy = float(np.sum(lap**2 * dmu))
    bound = 4.0 * (C**2 + 3.0 * D2)

    dn = normal_derivative(sigma, grid)
    flux = dn.as_field() * K * es
    boundary_term = sum(
        float(np.sum(flux[ij] * w)) for ij, w in boundary_length_weights(grid).values()
    )
    scale = abs(total) + sum(abs(b) for b in B) + 1e-300
    return EstimateReport(
        B1=B[0],
        B2=B[1],
        B3=B[2],
        D2=D2,
        eps_q=eps_q,
        bound_ok=bool(abs(B[2]) <= 3.0 * D2),
        B1_ok=bool(B[0] >= -eps_q),
        B2_ok=bool(B[1] >= -eps_q),
        laplacian_energy=lap_energy,
        C_proxy=float(C),
        energy_bound=float(bound),
        energy_ok=bool(lap_energy <= bound),
        identity_residual=float(abs(sum(B) - total) / scale),
        boundary_term=boundary_term,
        partition_sizes=tuple(int(np.sum(labels == i)) for i in (1, 2, 3)),
    )


def integration_by_parts_terms(sigma: np.ndarray, p: CurvatureProblem):
    """Both sides of the integration-by-parts step, for ``sigma`` flat at the boundary.

    Returns ``(lhs, rhs)`` with ``lhs = int lap_h(sigma) e^sigma K dmu`` and
    ``rhs = 4 [int |d_z sigma|^2 e^sigma |K| dA - Re int (d_z sigma) g |K| e^sigma dA]``
    (flat area element ``dA``; ``lap_h dmu = lap dA``).
    """
    grid, m = p.grid, p.metric
    inner = grid.interior
    K = p.K
    es = np.exp(sigma)
    lhs = float(np.sum(np.where(inner, laplace_beltrami(sigma, m) * es * K, 0.0) * m.dmu))
    d = dz(sigma, grid)
    g = g_field(K, grid)
    dA = grid.quad_weights * grid.flat_area
    rhs = 4.0 * float(np.sum((np.abs(d) ** 2 * es * np.abs(K) - np.real(d * g) * np.abs(K) * es) * dA))
    return lhs, rhs


@dataclass
class ConvergenceReport:
    monotone: bool
    cauchy_tail: bool
    final_ok: bool
    tail_oscillation: float
    note: str = ""

    @property
    def ok(self) -> bool:
        return self.monotone and self.cauchy_tail and self.final_ok


def convergence_monitor(history: Sequence, tol_b: float) -> ConvergenceReport:
    """Check ``S`` non-increasing, a settled tail of ``||lap_h sigma_n||`` and ``S <= tol^2``."""
    if len(history) < 2:
        return ConvergenceReport(True, True, True, 0.0, note="degenerate: fewer than two records")
    S = np.array([h.S for h in history])
    lap = np.array([h.lap_sigma_l2 for h in history])
    monotone = bool(np.all(np.diff(S) <= 0))
    tail = lap[-max(2, len(lap) // 4):]
    mean = float(np.mean(tail))
    osc = float(tail.max() - tail.min())
    cauchy = osc <= 0.01 * mean if mean > 0 else osc == 0
    final_ok = bool(S[-1] <= tol_b**2 * (1 + 1e-12))
    note = "" if monotone else "S increased along the sequence"
    return ConvergenceReport(monotone, bool(cauchy), bool(final_ok), osc, note)
