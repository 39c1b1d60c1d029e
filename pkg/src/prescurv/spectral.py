"""Dirichlet spectrum of ``-lap_h`` and its Green's operator."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .metric import ConformalMetric
from .mesh import dirichlet_energy
from .problem import laplace_beltrami
from .solver import CGError, cg_solve, factorized_preconditioner, weighted_dot


class SpectrumError(RuntimeError):
    pass


@dataclass(frozen=True)
class EigenPair:
    lam: float
    phi: np.ndarray = field(repr=False)
    residual: float = 0.0


@dataclass(frozen=True)
class Spectrum:
    pairs: List[EigenPair]

    @property
    def eigenvalues(self) -> np.ndarray:
        return np.array([p.lam for p in self.pairs])

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]


def _neg_lap(m: ConformalMetric):
    inner = m.grid.interior

    def apply(u):
        return np.where(inner, -laplace_beltrami(u, m), 0.0)

    return apply


class GreenOperator:
    """Inverse of ``-lap_h`` with zero Dirichlet data, ``lap_h(G tau) = -tau``.

    Applied by CG in ``L2(dmu)``, preconditioned with a sparse factorization
    of the same operator.
    """

    def __init__(self, m: ConformalMetric, tol: float = 1e-12, max_iter: int = 2000):
        self.metric = m
        self.tol = tol
        self.max_iter = max_iter
        self._apply = _neg_lap(m)
        self._precond = factorized_preconditioner(m, np.zeros(m.grid.shape), scale=1.0)

    def __call__(self, tau: np.ndarray) -> np.ndarray:
        m = self.metric
        tau = m.grid.check(tau, "tau")
        if np.any(tau[m.grid.boundary] != 0):
            raise ValueError("tau must vanish on the boundary")
        x, _ = cg_solve(self._apply, tau, m.dmu, m.grid.interior, self.tol, self.max_iter,
                        precond=self._precond, check_pairs=0)
        return x


def green_apply(m: ConformalMetric, tau: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    return GreenOperator(m, tol)(tau)


def _orthonormalize(Y: np.ndarray, dmu: np.ndarray) -> np.ndarray:
    """Columns of ``Y`` (n x p) made orthonormal in the ``dmu`` inner product."""
    sq = np.sqrt(dmu)[:, None]
    for _ in range(2):
        q, _ = np.linalg.qr(Y * sq)
        Y = q / sq
    return Y


def dirichlet_eigenpairs(
    m: ConformalMetric,
    k: int,
    seed: int = 0,
    tol: float = 1e-9,
    max_iter: int = 300,
    oversample: Optional[int] = None,
) -> Spectrum:
    """``k`` smallest eigenpairs of ``-lap_h`` with zero boundary values.

    Block inverse iteration with ``dmu``-orthonormalization and a
    Rayleigh-Ritz step, each inverse applied through :class:`GreenOperator`.
    Eigenvectors are dmu-normalized with a positive sum (or, when the sum
    vanishes, a positive largest entry).
    """
    grid = m.grid
    n_int = grid.n_interior
    if k < 1 or k > n_int // 4:
        raise ValueError(f"k must lie in [1, {n_int // 4}], got {k}")
    inner = grid.interior
    dmu_i = m.dmu[inner]
    p = min(k + (oversample if oversample is not None else max(4, k)), n_int // 2)
    G = GreenOperator(m)
    A = _neg_lap(m)

    def embed(v):
        out = np.zeros(grid.shape)
        out[inner] = v
        return out

    rng = np.random.default_rng(seed)
    X = _orthonormalize(rng.standard_normal((n_int, p)), dmu_i)
    lam = None
    for it in range(max_iter):
        Y = np.column_stack([G(embed(X[:, j]))[inner] for j in range(p)])
        Y = _orthonormalize(Y, dmu_i)
        AY = np.column_stack([A(embed(Y[:, j]))[inner] for j in range(p)])
        H = (Y * dmu_i[:, None]).T @ AY
        lam, V = np.linalg.eigh(0.5 * (H + H.T))
        X = Y @ V
        AX = AY @ V
        R = AX[:, :k] - X[:, :k] * lam[:k]
        res = np.sqrt(np.sum(R * R * dmu_i[:, None], axis=0))
        if np.all(res <= tol * lam[:k]):
            break
    else:
        raise SpectrumError(f"eigen-iteration stagnated; residuals {res / lam[:k]}")

    pairs = []
    for j in range(k):
        phi = embed(X[:, j])
        s = phi.sum()
        if abs(s) < 1e-8 * np.abs(phi).sum():
            s = phi.flat[np.argmax(np.abs(phi))]
        if s < 0:
            phi = -phi
        phi.setflags(write=False)
        pairs.append(EigenPair(float(lam[j]), phi, float(res[j])))
    if pairs[0].lam <= 0:
        raise SpectrumError(f"non-positive Dirichlet eigenvalue {pairs[0].lam}")
    return Spectrum(pairs)


@dataclass
class GreenBoundReport:
    lambda1: float
    spectral_bound: float
    ratios: List[float]
    energy_residuals: List[float]
    energy_slack: List[float]
    violations: List[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def max_ratio(self) -> float:
        return max(self.ratios)


def green_bound_check(
    m: ConformalMetric,
    trials: int = 20,
    seed: int = 0,
    spectrum: Optional[Spectrum] = None,
    slack: float = 1e-8,
) -> GreenBoundReport:
    """Check ``||G tau|| <= max(1, 1/lambda1) ||tau||`` on random ``tau``.

    Also checks ``||G tau|| <= (1/lambda1 + slack) ||tau||`` and the first
    derivative chain ``int |grad G tau|^2 = -<G tau, lap_h G tau> <=
    ||G tau|| ||lap_h G tau||``.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    grid = m.grid
    inner = grid.interior
    if spectrum is None:
        spectrum = dirichlet_eigenpairs(m, 1, seed=seed)
    lam1 = spectrum[0].lam
    bound = max(1.0, 1.0 / lam1)
    G = GreenOperator(m)
    rng = np.random.default_rng(seed)
    ratios, e_res, e_slack, bad = [], [], [], []
    for _ in range(trials):
        tau = np.where(inner, rng.standard_normal(grid.shape), 0.0)
        tau /= np.sqrt(weighted_dot(tau, tau, m.dmu))
        u = G(tau)
        norm_u = np.sqrt(weighted_dot(u, u, m.dmu))
        lap_u = np.where(inner, laplace_beltrami(u, m), 0.0)
        energy = dirichlet_energy(u, grid)
        pairing = -weighted_dot(u, lap_u, m.dmu)
        cs = norm_u * np.sqrt(weighted_dot(lap_u, lap_u, m.dmu))
        ratios.append(float(norm_u))
        e_res.append(abs(energy - pairing) / abs(pairing))
        e_slack.append(float(cs - energy))
        if norm_u > bound or norm_u > 1.0 / lam1 + slack or energy > cs * (1 + 1e-12):
            bad.append(tau)
    return GreenBoundReport(lam1, bound, ratios, e_res, e_slack, bad)


def rayleigh_quotient(m: ConformalMetric, phi: np.ndarray) -> float:
    lap = np.where(m.grid.interior, -laplace_beltrami(phi, m), 0.0)
    return weighted_dot(lap, phi, m.dmu) / weighted_dot(phi, phi, m.dmu)


__all__ = [
    "CGError",
    "EigenPair",
    "GreenBoundReport",
    "GreenOperator",
    "Spectrum",
    "SpectrumError",
    "dirichlet_eigenpairs",
    "green_apply",
    "green_bound_check",
    "rayleigh_quotient",
]
