"""Newton and gradient-descent solvers for ``lap_h(sigma)/2 = K0 - K e^sigma``.

Unknowns live on interior nodes; ``sigma`` is held at zero on the boundary.
Linear systems are solved by conjugate gradients in the ``L2(dmu)`` inner
product, optionally preconditioned by a sparse factorization of a frozen
operator.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

from .mesh import Grid, build_annulus, laplacian_matrix, normal_derivative
from .metric import ConformalMetric
from .problem import (
    CurvatureProblem,
    gradient_S,
    laplace_beltrami,
    newton_operator,
    residual_b,
)

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class CGError(SolverError):
    pass


# -- linear algebra ------------------------------------------------------------

def weighted_dot(u: np.ndarray, v: np.ndarray, dmu: np.ndarray) -> float:
    return float(np.sum(u * v * dmu))


def cg_solve(
    apply: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    dmu: np.ndarray,
    interior: np.ndarray,
    tol: float = 1e-10,
    max_iter: int = 5000,
    precond: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    check_pairs: int = 3,
    seed: int = 0,
):
    """Solve ``apply(x) = rhs`` on interior nodes by (preconditioned) CG.

    Inner products are ``sum(u * v * dmu)``. Returns ``(x, iterations)`` with
    ``||apply(x) - rhs|| <= tol * ||rhs||``. Raises :class:`CGError` when the
    operator looks non-symmetric or indefinite, or when the iteration budget
    runs out.
    """
    edge = ~interior
    rhs = np.where(interior, rhs, 0.0)
    norm_rhs = np.sqrt(weighted_dot(rhs, rhs, dmu))
    x = np.zeros_like(rhs)
    if norm_rhs == 0.0:
        return x, 0

    if check_pairs:
        rng = np.random.default_rng(seed)
        for _ in range(check_pairs):
            u = np.where(interior, rng.standard_normal(rhs.shape), 0.0)
            v = np.where(interior, rng.standard_normal(rhs.shape), 0.0)
            au, av = apply(u), apply(v)
            uav, vau = weighted_dot(u, av, dmu), weighted_dot(v, au, dmu)
            uau = weighted_dot(u, au, dmu)
            if abs(uav - vau) > 1e-8 * (abs(uav) + abs(vau)) + 1e-300:
                raise CGError(f"operator is not self-adjoint: {uav:.6g} vs {vau:.6g}")
            if not uau > 0:
                raise CGError(f"operator is not positive definite: <Au,u> = {uau:.6g}")

    M = precond if precond is not None else (lambda r: r)
    iterations = 0
    target = tol * norm_rhs
    for _restart in range(4):
        r = rhs - apply(x)
        r[edge] = 0.0
        if np.sqrt(weighted_dot(r, r, dmu)) <= target:
            return x, iterations
        z = M(r)
        p = z.copy()
        rz = weighted_dot(r, z, dmu)
        while iterations < max_iter:
            ap = apply(p)
            ap[edge] = 0.0
            pap = weighted_dot(p, ap, dmu)
            if not pap > 0:
                raise CGError(f"operator is not positive definite: <Ap,p> = {pap:.6g}")
            alpha = rz / pap
            x += alpha * p
            r -= alpha * ap
            iterations += 1
            if np.sqrt(weighted_dot(r, r, dmu)) <= target:
                break
            z = M(r)
            rz_new = weighted_dot(r, z, dmu)
            p = z + (rz_new / rz) * p
            rz = rz_new
        else:
            raise CGError(f"CG did not converge in {max_iter} iterations")
    r = rhs - apply(x)
    r[edge] = 0.0
    if np.sqrt(weighted_dot(r, r, dmu)) > target:
        raise CGError("CG stalled: recurrence converged but true residual did not")
    return x, iterations


def factorized_preconditioner(metric: ConformalMetric, potential: np.ndarray, scale: float = 0.5):
    """Exact inverse of ``u -> -scale * lap_h(u) + potential * u`` on interior nodes.

    Built from a sparse LU of the ``dmu``-symmetrized matrix; used as a
    fixed preconditioner for CG.
    """
    grid = metric.grid
    inner = grid.interior
    dmu = metric.dmu[inner]
    q_area = (grid.quad_weights * grid.flat_area)[inner]
    L = laplacian_matrix(grid)
    A = sparse.diags(-scale * q_area) @ L + sparse.diags(dmu * potential[inner])
    lu = spla.splu(sparse.csc_matrix(A))

    def apply(r):
        out = np.zeros(grid.shape)
        out[inner] = lu.solve(dmu * r[inner])
        return out

    return apply


# -- configuration and results -------------------------------------------------

@dataclass(frozen=True)
class SolverConfig:
    method: str = "newton"
    tol_b: float = 1e-10
    max_iter: int = 50
    cg_tol: float = 1e-12
    cg_max_iter: int = 5000
    armijo_c1: float = 1e-4
    backtrack: float = 0.5
    max_halvings: int = 40
    precondition: bool = True
    keep_iterates: bool = False

    def __post_init__(self):
        if self.method not in ("newton", "gradient"):
            raise ValueError(f"method must be 'newton' or 'gradient', got {self.method!r}")
        if not (self.tol_b > 0 and self.cg_tol > 0):
            raise ValueError("tol_b and cg_tol must be positive")
        if self.max_iter < 0 or self.cg_max_iter < 1:
            raise ValueError("iteration limits must be positive")


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    S: float
    b_l2: float
    grad_norm: float
    step: float
    lap_sigma_l2: float


@dataclass
class SolveResult:
    sigma: np.ndarray = field(repr=False)
    history: List[IterationRecord]
    converged: bool
    boundary_report: dict
    message: str = ""
    iterates: List[np.ndarray] = field(default_factory=list, repr=False)

    @property
    def final(self) -> IterationRecord:
        return self.history[-1]

    @property
    def iterations(self) -> int:
        return self.history[-1].iter


def boundary_report(sigma: np.ndarray, metric: ConformalMetric) -> dict:
    """Class-T quantities on the boundary: ``max |sigma|``, ``|d_nu sigma|``, ``|lap_h sigma|``."""
    grid = metric.grid
    edge = grid.boundary
    lap = laplace_beltrami(sigma, metric)
    return {
        "max_abs_sigma": float(np.max(np.abs(sigma[edge]))),
        "max_abs_dnu_sigma": normal_derivative(sigma, grid).max_abs(),
        "max_abs_lap_sigma": float(np.max(np.abs(lap[edge]))),
    }


def _record(k, sigma, p, res, step):
    m = p.metric
    inner = p.grid.interior
    grad = gradient_S(sigma, p, res)
    lap = np.where(inner, laplace_beltrami(sigma, m), 0.0)
    return IterationRecord(
        iter=k,
        S=res.S,
        b_l2=res.b_l2,
        grad_norm=float(np.sqrt(weighted_dot(grad, grad, m.dmu))),
        step=step,
        lap_sigma_l2=float(np.sqrt(weighted_dot(lap, lap, m.dmu))),
    )


def _initial(p: CurvatureProblem, sigma0: Optional[np.ndarray]) -> np.ndarray:
    grid = p.grid
    if sigma0 is None:
        return np.zeros(grid.shape)
    sigma = np.array(grid.check(sigma0, "sigma0"), dtype=float)
    if np.max(np.abs(sigma[grid.boundary])) > 1e-12:
        raise ValueError("initial sigma must vanish on the boundary")
    sigma[grid.boundary] = 0.0
    return sigma


def _finish(sigma, history, converged, p, message, iterates):
    return SolveResult(
        sigma=sigma,
        history=history,
        converged=converged,
        boundary_report=boundary_report(sigma, p.metric),
        message=message,
        iterates=iterates,
    )


# -- solvers ------------------------------------------------------------------

def newton_solve(
    p: CurvatureProblem,
    sigma0: Optional[np.ndarray] = None,
    cfg: SolverConfig = SolverConfig(),
) -> SolveResult:
    """Damped Newton iteration on ``b(sigma) = 0``.

    Each step solves ``(-lap_h/2 - K e^sigma) delta = b`` and moves to
    ``sigma - t delta``; ``t`` is halved until ``S`` satisfies the Armijo
    condition (``<grad S, -delta> = -2 S`` for an exact solve).
    """
    grid, m = p.grid, p.metric
    inner = grid.interior
    sigma = _initial(p, sigma0)
    res = residual_b(sigma, p)
    history = [_record(0, sigma, p, res, 0.0)]
    iterates = [sigma.copy()] if cfg.keep_iterates else []
    precond = factorized_preconditioner(m, -p.K) if cfg.precondition else None

    for k in range(1, cfg.max_iter + 1):
        if res.b_l2 <= cfg.tol_b:
            break
        J = newton_operator(sigma, p)
        rhs = np.where(inner, res.b, 0.0)
        try:
            delta, n_cg = cg_solve(J, rhs, m.dmu, inner, cfg.cg_tol, cfg.cg_max_iter,
                                   precond=precond, seed=k)
        except CGError as exc:
            return _finish(sigma, history, False, p, f"CG failure: {exc}", iterates)
        t = 1.0
        for _ in range(cfg.max_halvings + 1):
            trial = sigma - t * delta
            trial_res = residual_b(trial, p)
            if trial_res.S <= res.S * (1.0 - 2.0 * cfg.armijo_c1 * t):
                break
            t *= cfg.backtrack
        else:
            return _finish(sigma, history, res.b_l2 <= cfg.tol_b, p,
                           "line search failed", iterates)
        sigma, res = trial, trial_res
        history.append(_record(k, sigma, p, res, t))
        if cfg.keep_iterates:
            iterates.append(sigma.copy())
        logger.debug("newton %d: b_l2=%.3e step=%.3g cg=%d", k, res.b_l2, t, n_cg)

    converged = res.b_l2 <= cfg.tol_b
    return _finish(sigma, history, converged, p,
                   "converged" if converged else "max_iter exceeded", iterates)


def gradient_descent_solve(
    p: CurvatureProblem,
    sigma0: Optional[np.ndarray] = None,
    cfg: SolverConfig = SolverConfig(method="gradient", max_iter=500),
    preconditioned: bool = True,
) -> SolveResult:
    """Minimizing sequence ``sigma_{n+1} = sigma_n - t P^{-1} grad S(sigma_n)``.

    ``P = 2 A0^2`` with the frozen operator ``A0 = -lap_h/2 - K`` (a Sobolev
    metric matched to the Gauss-Newton part of the Hessian of ``S``); with ``preconditioned=False`` it is the
    identity and the plain ``L2(dmu)`` gradient is followed. Every accepted
    step satisfies the Armijo condition, so ``S`` strictly decreases.
    """
    grid, m = p.grid, p.metric
    inner = grid.interior
    sigma = _initial(p, sigma0)
    res = residual_b(sigma, p)
    history = [_record(0, sigma, p, res, 0.0)]
    iterates = [sigma.copy()] if cfg.keep_iterates else []
    if preconditioned:
        solve0 = factorized_preconditioner(m, -p.K)
        direction_of = lambda g: 0.5 * solve0(solve0(g))  # noqa: E731
    else:
        direction_of = lambda g: g  # noqa: E731
    t_next = 1.0

    for k in range(1, cfg.max_iter + 1):
        if res.b_l2 <= cfg.tol_b:
            break
        grad = gradient_S(sigma, p, res)
        d = np.where(inner, direction_of(grad), 0.0)
        slope = weighted_dot(grad, d, m.dmu)
        t = t_next
        for _ in range(cfg.max_halvings + 1):
            trial = sigma - t * d
            trial_res = residual_b(trial, p)
            if trial_res.S <= res.S - cfg.armijo_c1 * t * slope and trial_res.S < res.S:
                break
            t *= cfg.backtrack
        else:
            return _finish(sigma, history, res.b_l2 <= cfg.tol_b, p,
                           "line search failed", iterates)
        sigma, res = trial, trial_res
        history.append(_record(k, sigma, p, res, t))
        if cfg.keep_iterates:
            iterates.append(sigma.copy())
        t_next = min(1.0, t / cfg.backtrack)

    converged = res.b_l2 <= cfg.tol_b
    return _finish(sigma, history, converged, p,
                   "converged" if converged else "max_iter exceeded", iterates)


def solve(p: CurvatureProblem, sigma0=None, cfg: SolverConfig = SolverConfig()) -> SolveResult:
    if cfg.method == "newton":
        return newton_solve(p, sigma0, cfg)
    return gradient_descent_solve(p, sigma0, cfg)


# -- uniqueness and extension ----------------------------------------------------

@dataclass
class UniquenessReport:
    max_distance: float
    pair: tuple
    energy_lhs: float
    energy_rhs: float
    energy_residual: float
    results: List[SolveResult] = field(repr=False)


def default_seeds(grid: Grid, seed: int = 0) -> List[np.ndarray]:
    """0, +0.3 and -0.3 on the interior, and uniform noise in [-0.5, 0.5]."""
    inner = grid.interior
    rng = np.random.default_rng(seed)
    return [
        np.zeros(grid.shape),
        np.where(inner, 0.3, 0.0),
        np.where(inner, -0.3, 0.0),
        np.where(inner, rng.uniform(-0.5, 0.5, grid.shape), 0.0),
    ]


def uniqueness_check(
    p: CurvatureProblem,
    seeds: Sequence[np.ndarray],
    cfg: SolverConfig = SolverConfig(),
) -> UniquenessReport:
    """Solve from every seed; all converged solutions must coincide.

    Also evaluates, for the most distant pair ``zeta = sigma_a - sigma_b``,
    the energy identity ``<-lap_h zeta, zeta> = <-2K(e^sigma_a - e^sigma_b), zeta>``.
    """
    results = []
    for i, s0 in enumerate(seeds):
        r = solve(p, s0, cfg)
        if not r.converged:
            raise SolverError(f"seed {i} did not converge: {r.message}")
        results.append(r)
    best, pair = 0.0, (0, 0)
    for i in range(len(results)):
        for j in range(i + 1, len(results)):
            d = float(np.max(np.abs(results[i].sigma - results[j].sigma)))
            if d > best:
                best, pair = d, (i, j)
    sa, sb = results[pair[0]].sigma, results[pair[1]].sigma
    zeta = sa - sb
    m = p.metric
    inner = p.grid.interior
    lhs = weighted_dot(np.where(inner, -laplace_beltrami(zeta, m), 0.0), zeta, m.dmu)
    rhs = weighted_dot(np.where(inner, -2.0 * p.K * (np.exp(sa) - np.exp(sb)), 0.0), zeta, m.dmu)
    return UniquenessReport(best, pair, lhs, rhs, abs(lhs - rhs), results)


@dataclass
class ExtendedSolution:
    grid: Grid
    sigma: np.ndarray = field(repr=False)
    n_extension: int
    seam_report: dict


def extend_by_zero(res: SolveResult, p: CurvatureProblem, r_extension: float) -> ExtendedSolution:
    """Extend ``sigma`` by zero inward across the inner boundary circle.

    The enlarged annulus keeps the radial spacing, so ``r_extension`` is
    rounded to the nearest whole number of cells.
    """
    grid = p.grid
    if not grid.is_annulus:
        raise ValueError("extension by zero needs an annulus (excised disc) domain")
    if not (0 < r_extension < grid.r_in):
        raise ValueError(f"need 0 < r_extension < r_in = {grid.r_in}, got {r_extension}")
    n_ext = int(round((grid.r_in - r_extension) / grid.d1))
    n_ext = min(max(n_ext, 1), int(np.floor(grid.r_in / grid.d1 - 1e-9)))
    r_new = grid.r_in - n_ext * grid.d1
    big = build_annulus(r_new, grid.r_out, grid.n1 + n_ext, grid.n2)
    sigma_ext = np.zeros(big.shape)
    sigma_ext[n_ext:] = res.sigma
    dn = normal_derivative(res.sigma, grid).components["inner"][1]
    seam = {
        "sigma_jump": float(np.max(np.abs(sigma_ext[n_ext] - sigma_ext[n_ext - 1]))),
        "dnu_mismatch": float(np.max(np.abs(dn))),
        "r_seam": grid.r_in,
        "r_extension": r_new,
    }
    return ExtendedSolution(big, sigma_ext, n_ext, seam)


def with_method(cfg: SolverConfig, method: str) -> SolverConfig:
    return replace(cfg, method=method)
