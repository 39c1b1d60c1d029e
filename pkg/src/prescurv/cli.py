"""Command line driver: ``solve``, ``curvature``, ``spectrum`` and ``verify``.

Exit codes: 0 success, 1 failed verification check, 2 invalid configuration
or missing files, 3 solver did not converge, 4 estimate violation.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from contextlib import nullcontext
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, List, Optional, Tuple

import numpy as np

from . import estimates, fieldio, metric as metric_mod
from .mesh import Grid, GridError, build_annulus, grid_from_spec
from .metric import ConformalMetric, MetricError, OrthogonalMetric, curvature_orthogonal
from .problem import (
    CurvatureProblem,
    TargetError,
    blend_target,
    curvature_of,
    functional_S,
    gradient_S,
    residual_b,
)
from .solver import SolverConfig, SolverError, default_seeds, newton_solve, solve, weighted_dot
from .spectral import SpectrumError, dirichlet_eigenpairs, green_bound_check

logger = logging.getLogger("prescurv")

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_NOCONV, EXIT_ESTIMATE = 0, 1, 2, 3, 4
THREADS_ENV = "PRESCURV_THREADS"


class ConfigError(ValueError):
    pass


# -- configuration ---------------------------------------------------------------

_DOMAIN_KEYS = {
    "annulus": {"kind", "r_in", "r_out", "n_r", "n_theta"},
    "rectangle": {"kind", "lx", "ly", "nx", "ny"},
}
_METRIC_KEYS = {
    "flat": ({"kind"}, set()),
    "cusp": ({"kind"}, set()),
    "poincare": ({"kind"}, set()),
    "paper4": ({"kind"}, set()),
    "blend": ({"kind"}, {"a", "b"}),
    "file": ({"kind", "path"}, set()),
}
_TARGET_KEYS = {
    "scale": ({"kind", "value", "collar_width"}, set()),
    "offset": ({"kind", "value", "collar_width"}, set()),
    "file": ({"kind", "path", "collar_width"}, set()),
}
_SOLVER_KEYS = {f.name for f in fields(SolverConfig)} - {"keep_iterates"}
_OUTPUT_KEYS = {"directory", "dump_fields", "estimate_every", "seed"}
_TOP_KEYS = ({"domain", "metric"}, {"target", "solver", "output", "spectrum"})


def _check_keys(section: str, d: Any, required: set, optional: set = frozenset()):
    if not isinstance(d, dict):
        raise ConfigError(f"{section}: expected an object")
    unknown = set(d) - required - set(optional)
    if unknown:
        raise ConfigError(f"{section}: unknown key {sorted(unknown)[0]!r}")
    missing = required - set(d)
    if missing:
        raise ConfigError(f"{section}: missing key {sorted(missing)[0]!r}")


def _kind(section: str, d: Any, table: dict) -> str:
    if not isinstance(d, dict) or d.get("kind") not in table:
        kind = d.get("kind") if isinstance(d, dict) else None
        raise ConfigError(f"{section}: kind must be one of {sorted(table)}, got {kind!r}")
    return d["kind"]


def validate_config(cfg: Any) -> dict:
    """Strict schema check; returns the config with defaults filled in."""
    _check_keys("config", cfg, *_TOP_KEYS)
    dom = cfg["domain"]
    _check_keys("domain", dom, _DOMAIN_KEYS[_kind("domain", dom, _DOMAIN_KEYS)])
    met = cfg["metric"]
    _check_keys("metric", met, *_METRIC_KEYS[_kind("metric", met, _METRIC_KEYS)])
    if "target" in cfg:
        tgt = cfg["target"]
        _check_keys("target", tgt, *_TARGET_KEYS[_kind("target", tgt, _TARGET_KEYS)])
    solver = cfg.get("solver", {})
    _check_keys("solver", solver, set(), _SOLVER_KEYS)
    out = {"directory": "out", "dump_fields": True, "estimate_every": 1, "seed": 0}
    _check_keys("output", cfg.get("output", {}), set(), _OUTPUT_KEYS)
    out.update(cfg.get("output", {}))
    if "spectrum" in cfg:
        _check_keys("spectrum", cfg["spectrum"], {"k"})
    full = dict(cfg)
    full["solver"] = dict(solver)
    full["output"] = out
    return full


def load_config(path) -> dict:
    try:
        raw = json.loads(Path(path).read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file {path} not found") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from None
    cfg = validate_config(raw)
    base = Path(path).resolve().parent
    for section in ("metric", "target"):
        spec = cfg.get(section, {})
        if "path" in spec:
            spec["path"] = str(base / spec["path"])
    return cfg


def build_metric(cfg: dict, grid: Grid) -> ConformalMetric:
    spec = cfg["metric"]
    kind = spec["kind"]
    if kind == "flat":
        return metric_mod.flat_metric(grid)
    if kind == "cusp":
        return metric_mod.cusp_metric(grid)
    if kind == "poincare":
        return metric_mod.poincare_metric(grid)
    if kind == "paper4":
        return metric_mod.paper4_factor(grid)
    if kind == "blend":
        return metric_mod.example_blend(grid, spec.get("a", 1.5), spec.get("b", 2.0))
    h, _, _ = fieldio.read_field(spec["path"], grid)
    return metric_mod.from_factor(grid, h)


def build_problem(cfg: dict) -> CurvatureProblem:
    grid = grid_from_spec(cfg["domain"])
    m = build_metric(cfg, grid)
    if "target" not in cfg:
        raise ConfigError("config: missing key 'target'")
    t = cfg["target"]
    w = float(t["collar_width"])
    if t["kind"] == "scale":
        K = blend_target(m, w, scale=float(t["value"]))
    elif t["kind"] == "offset":
        K = blend_target(m, w, offset=float(t["value"]))
    else:
        inner, _, _ = fieldio.read_field(t["path"], grid)
        K = blend_target(m, w, field=inner)
    return CurvatureProblem(m, K, w)


def solver_config(cfg: dict, keep_iterates: bool = False) -> SolverConfig:
    try:
        return SolverConfig(**cfg["solver"], keep_iterates=keep_iterates)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"solver: {exc}") from None


# -- helpers --------------------------------------------------------------------

def _to_builtin(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _json_dump(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_to_builtin) + "\n")


def _write_history(path: Path, history) -> None:
    lines = ["iter,S,b_l2,grad_norm,step,lap_sigma_l2"]
    for h in history:
        lines.append(f"{h.iter},{h.S:.17g},{h.b_l2:.17g},{h.grad_norm:.17g},"
                     f"{h.step:.17g},{h.lap_sigma_l2:.17g}")
    path.write_text("\n".join(lines) + "\n")


def achieved_curvature(sigma: np.ndarray, p: CurvatureProblem) -> np.ndarray:
    """Curvature of ``e^sigma h``; boundary nodes carry ``K0`` (sigma = 0 there)."""
    K = curvature_of(sigma, p.metric)
    edge = p.grid.boundary
    K[edge] = p.metric.K0[edge]
    return K


def sign_report(m: ConformalMetric) -> dict:
    """Compare both signs of the orthogonal-coordinates formula with the conformal route."""
    grid = m.grid
    if not grid.is_annulus:
        return {}
    om = OrthogonalMetric.from_conformal(m)
    inner = grid.interior
    conv = curvature_orthogonal(om, "conventional")
    paper = curvature_orthogonal(om, "paper")
    d_conv = float(np.max(np.abs(conv - m.K0)[inner]))
    d_paper = float(np.max(np.abs(paper - m.K0)[inner]))
    scale = float(np.max(np.abs(m.K0[inner])))
    agrees = "conventional" if d_conv <= d_paper else "paper"
    note = ""
    if scale > 0 and agrees == "conventional":
        note = ("orthogonal formula without the leading minus sign has the opposite sign "
                "of the conformal curvature")
    return {
        "max_diff_conventional": d_conv,
        "max_diff_paper_sign": d_paper,
        "agreeing_convention": agrees,
        "sign_discrepancy": bool(scale > 0 and d_paper > 10 * d_conv),
        "note": note,
    }


def log_factor_sign_probe(n_r: int = 129) -> dict:
    """Curvature of the ``log(4/r)`` factor at ``r = 1`` by each route."""
    grid = build_annulus(0.5, 1.5, n_r, 64)
    i = int(np.argmin(np.abs(grid.c1 - 1.0)))
    m = metric_mod.paper4_factor(grid)
    om = OrthogonalMetric.from_conformal(m)
    return {
        "closed_form_magnitude": 1.0 / (2.0 * np.log(4.0) ** 3),
        "conformal": float(m.K0[i, 0]),
        "orthogonal_conventional": float(curvature_orthogonal(om, "conventional")[i, 0]),
        "orthogonal_paper_sign": float(curvature_orthogonal(om, "paper")[i, 0]),
    }


# -- commands ------------------------------------------------------------------

def cmd_solve(config_path, out: Optional[str] = None) -> Tuple[int, dict]:
    t0 = time.perf_counter()
    cfg = load_config(config_path)
    if out is not None:
        cfg["output"]["directory"] = out
    p = build_problem(cfg)
    every = int(cfg["output"]["estimate_every"])
    scfg = solver_config(cfg, keep_iterates=every > 0)
    res = solve(p, None, scfg)

    est_reports = []
    if every > 0:
        picks = list(range(0, len(res.iterates), every))
        if picks[-1] != len(res.iterates) - 1:
            picks.append(len(res.iterates) - 1)
        est_reports = [estimates.b_terms_report(res.iterates[i], p) for i in picks]
    final_est = est_reports[-1] if est_reports else estimates.b_terms_report(res.sigma, p)
    estimates_ok = all(r.ok for r in est_reports) and final_est.ok
    monitor = estimates.convergence_monitor(res.history, scfg.tol_b)

    outdir = Path(cfg["output"]["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    if cfg["output"]["dump_fields"]:
        grid = p.grid
        paths["meta"] = fieldio.write_meta(outdir, grid)
        for name, f in (
            ("sigma", res.sigma),
            ("K_target", p.K),
            ("K_achieved", achieved_curvature(res.sigma, p)),
            ("residual", residual_b(res.sigma, p).b),
        ):
            paths[name] = fieldio.write_field(outdir / f"{name}.csv", f, grid, name)
        paths["history"] = outdir / "history.csv"
        _write_history(paths["history"], res.history)
    paths["config"] = outdir / "config.json"
    _json_dump(paths["config"], cfg)

    report = {
        "config": cfg,
        "converged": bool(res.converged),
        "message": res.message,
        "iters": res.iterations,
        "S_final": res.final.S,
        "b_l2_final": res.final.b_l2,
        "boundary_report": res.boundary_report,
        "estimates": final_est.as_dict(),
        "estimates_all_ok": bool(estimates_ok),
        "estimates_checked": len(est_reports),
        "convergence_monitor": asdict(monitor),
        "artifacts": {k: str(v.name) for k, v in paths.items()},
    }
    if "spectrum" in cfg:
        report["lambda1"] = dirichlet_eigenpairs(p.metric, int(cfg["spectrum"]["k"]))[0].lam
    report["timing"] = {"wall_time": time.perf_counter() - t0}
    _json_dump(outdir / "report.json", report)

    if not res.converged:
        return EXIT_NOCONV, report
    if not estimates_ok:
        return EXIT_ESTIMATE, report
    return EXIT_OK, report


def curvature_oracle(kind: str, grid: Grid) -> Optional[np.ndarray]:
    """Closed-form curvature for the built-in metrics, or None when there is none."""
    if kind == "flat":
        return np.zeros(grid.shape)
    if kind in ("cusp", "poincare"):
        return -np.ones(grid.shape)
    if kind == "paper4":
        r, _ = grid.mesh()
        return 1.0 / (2.0 * r**2 * np.log(4.0 / r) ** 3)
    return None


def cmd_curvature(config_path, out: Optional[str] = None) -> Tuple[int, dict]:
    cfg = load_config(config_path)
    outdir = Path(out or cfg["output"]["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    grid = grid_from_spec(cfg["domain"])
    m = build_metric(cfg, grid)
    fieldio.write_meta(outdir, grid)
    fieldio.write_field(outdir / "K0.csv", m.K0, grid, "K0")
    report = {"metric": cfg["metric"]["kind"], "K0_interior_min": float(m.K0[grid.interior].min()),
              "K0_interior_max": float(m.K0[grid.interior].max())}
    oracle = curvature_oracle(cfg["metric"]["kind"], grid)
    if oracle is not None:
        report["max_interior_error_vs_closed_form"] = float(
            np.max(np.abs(m.K0 - oracle)[grid.interior]))
    if grid.is_annulus:
        om = OrthogonalMetric.from_conformal(m)
        fieldio.write_field(outdir / "K_orth_conventional.csv",
                            curvature_orthogonal(om, "conventional"), grid, "K_orth_conventional")
        fieldio.write_field(outdir / "K_orth_paper.csv",
                            curvature_orthogonal(om, "paper"), grid, "K_orth_paper")
        report["sign"] = sign_report(m)
    _json_dump(outdir / "curvature_report.json", report)
    return EXIT_OK, report


def cmd_spectrum(config_path, k: int, out: Optional[str] = None) -> Tuple[int, dict]:
    if k < 1:
        raise ConfigError(f"--k must be >= 1, got {k}")
    cfg = load_config(config_path)
    outdir = Path(out or cfg["output"]["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    grid = grid_from_spec(cfg["domain"])
    m = build_metric(cfg, grid)
    try:
        spec = dirichlet_eigenpairs(m, k, seed=int(cfg["output"]["seed"]))
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    fieldio.write_meta(outdir, grid)
    for i, pair in enumerate(spec.pairs, start=1):
        fieldio.write_field(outdir / f"phi_{i}.csv", pair.phi, grid, f"phi_{i}")
    report = {"eigenvalues": [p.lam for p in spec.pairs],
              "residuals": [p.residual for p in spec.pairs]}
    _json_dump(outdir / "spectrum.json", report)
    return EXIT_OK, report


def verify_checks(directory) -> List[Tuple[str, bool, str]]:
    """Re-run the invariant suite against a stored solve result."""
    directory = Path(directory)
    needed = ["report.json", "config.json", "sigma.csv", fieldio.META_NAME]
    missing = [n for n in needed if not (directory / n).exists()]
    if missing:
        raise FileNotFoundError(f"missing {', '.join(missing)} in {directory}")
    cfg = validate_config(json.loads((directory / "config.json").read_text()))
    p = build_problem(cfg)
    sigma, _, _ = fieldio.read_field(directory / "sigma.csv", p.grid)
    scfg = solver_config(cfg)
    m, grid = p.metric, p.grid
    inner = grid.interior
    rng = np.random.default_rng(int(cfg["output"]["seed"]))
    checks = []

    edge = float(np.max(np.abs(sigma[grid.boundary])))
    checks.append(("boundary_zero", edge == 0.0, f"max |sigma| on boundary = {edge:.3g}"))

    res = residual_b(sigma, p) if edge <= 1e-12 else None
    ok = res is not None and res.b_l2 <= scfg.tol_b
    checks.append(("residual", ok, f"b_l2 = {res.b_l2:.3e} (tol {scfg.tol_b:.1e})" if res else "n/a"))

    r, t = grid.mesh()
    worst = 0.0
    for _ in range(5):
        s = np.where(inner, 0.1 * rng.standard_normal() * _smooth_bump(grid), 0.0)
        a, b = functional_S(s, p), residual_b(s, p).S
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    checks.append(("functional_identity", worst <= 1e-10, f"max relative gap {worst:.2e}"))

    worst = 0.0
    for _ in range(3):
        s = np.where(inner, 0.1 * rng.standard_normal(grid.shape), 0.0)
        beta = np.where(inner, rng.standard_normal(grid.shape), 0.0)
        h = 1e-5
        fd = (functional_S(s + h * beta, p) - functional_S(s - h * beta, p)) / (2 * h)
        an = weighted_dot(gradient_S(s, p), beta, m.dmu)
        worst = max(worst, abs(fd - an) / abs(an))
    checks.append(("gradient_check", worst <= 1e-6, f"max relative error {worst:.2e}"))

    seeds = default_seeds(grid, int(cfg["output"]["seed"]))
    dists = []
    for s0 in (seeds[0], seeds[1], seeds[3]):
        sol = newton_solve(p, s0, scfg)
        dists.append(float(np.max(np.abs(sol.sigma - sigma))) if sol.converged else np.inf)
    checks.append(("uniqueness", max(dists) <= 1e-8,
                   f"max distance of 3 re-solves to stored sigma {max(dists):.2e}"))

    est = estimates.b_terms_report(sigma, p) if edge <= 1e-12 else None
    checks.append(("estimates", bool(est and est.ok),
                   f"B1={est.B1:.3g} B2={est.B2:.3g} |B3|<=3D2: {est.bound_ok}" if est else "n/a"))

    try:
        gb = green_bound_check(m, trials=5, seed=int(cfg["output"]["seed"]))
        checks.append(("green_bound", gb.ok, f"lambda1={gb.lambda1:.6g} max ratio {gb.max_ratio:.3e}"))
    except SpectrumError as exc:
        checks.append(("green_bound", False, str(exc)))

    probe = log_factor_sign_probe()
    detail = (f"log(4/r) factor at r=1: conformal {probe['conformal']:+.5f}, "
              f"orthogonal conventional {probe['orthogonal_conventional']:+.5f}, "
              f"orthogonal without leading minus {probe['orthogonal_paper_sign']:+.5f}; "
              f"the factor is positively curved, so the unsigned formula reports the wrong sign")
    sr = sign_report(m)
    if sr:
        detail += (f"; run metric agrees with the {sr['agreeing_convention']} convention "
                   f"(discrepancy {sr['sign_discrepancy']})")
    checks.append(("curvature_sign_note", True, detail))
    return checks


def _smooth_bump(grid: Grid) -> np.ndarray:
    d = grid.distance_to_boundary()
    return np.sin(np.pi * d / max(d.max(), 1e-300)) ** 2


def cmd_verify(directory) -> Tuple[int, list]:
    checks = verify_checks(directory)
    code = EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_CHECK
    _json_dump(Path(directory) / "verify.json", {
        "passed": code == EXIT_OK,
        "checks": [{"check": n, "passed": bool(ok), "detail": d} for n, ok, d in checks],
        "curvature_sign": log_factor_sign_probe(),
    })
    return code, checks


# -- entry point -----------------------------------------------------------------

def _thread_limit():
    value = os.environ.get(THREADS_ENV)
    if not value:
        return nullcontext()
    try:
        n = int(value)
        if n < 1:
            raise ValueError
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be a positive integer, got {value!r}") from None
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="prescurv", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    s = sub.add_parser("solve", help="solve for the conformal factor")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    c = sub.add_parser("curvature", help="curvature of the configured metric")
    c.add_argument("--config", required=True)
    c.add_argument("--out", default=None)
    sp = sub.add_parser("spectrum", help="Dirichlet eigenpairs of the metric Laplacian")
    sp.add_argument("--config", required=True)
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--out", default=None)
    v = sub.add_parser("verify", help="re-check a stored solve result")
    v.add_argument("directory")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            if args.command == "solve":
                code, report = cmd_solve(args.config, args.out)
                print(f"converged={report['converged']} iters={report['iters']} "
                      f"b_l2={report['b_l2_final']:.3e} estimates_ok={report['estimates_all_ok']}")
            elif args.command == "curvature":
                code, report = cmd_curvature(args.config, args.out)
                print(json.dumps(report, indent=2))
            elif args.command == "spectrum":
                code, report = cmd_spectrum(args.config, args.k, args.out)
                print(" ".join(f"{lam:.10g}" for lam in report["eigenvalues"]))
            else:
                code, checks = cmd_verify(args.directory)
                for name, ok, detail in checks:
                    print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    except (ConfigError, GridError, MetricError, TargetError, fieldio.FieldFormatError,
            FileNotFoundError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SolverError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOCONV
    return code


if __name__ == "__main__":
    sys.exit(main())
