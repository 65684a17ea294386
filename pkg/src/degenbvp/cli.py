"""Batch front end: ``solve``, ``verify``, ``bench`` and ``transform`` subcommands.

Exit codes: 0 success, 2 configuration/parse error, 3 structural conditions
violated, 4 solver failure, 5 verification verdict failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .benchmarks import BenchmarkError, BenchmarkInstance, get_benchmark, list_benchmarks
from .canonical import (
    CanonicalCoefficients,
    TransformError,
    build_tubular_chart,
    canonical_coefficients,
    compute_b0,
    solve_psi_characteristics,
    transform_coefficients,
)
from .continuation import (
    ContinuationResult,
    EpsilonSchedule,
    GlueError,
    glue_solutions,
    run_both_sides,
)
from .expressions import ExpressionError
from .grids import GridError, attach, build_cutcell_grid, load_field_values, save_field
from .interface import InterfaceError, extract_interface
from .problem import (ProblemError, coefficient_norms, homogenize, load_problem,
                      verify_structural_conditions)
from .solver import SolverError
from .verification import (
    EstimateReport,
    EstimateRow,
    _boundedness,
    estimate_report,
    flux_decay_fit,
    weak_residual,
)

log = logging.getLogger("degenbvp")

EXIT_OK, EXIT_CONFIG, EXIT_STRUCTURAL, EXIT_SOLVER, EXIT_VERDICT = 0, 2, 3, 4, 5


class ConfigError(Exception):
    pass


class StructuralFailure(Exception):
    pass


class VerdictFailure(Exception):
    pass


@dataclass
class RunConfig:
    problem_file: str | None = None
    bench: str | None = None
    params: dict = field(default_factory=dict)
    nx: int = 128
    ny: int = 128
    eps0: float = 0.1
    eps_ratio: float = 0.5
    eps_floor: float | None = None
    cauchy_tol: float | None = 1e-4
    scheme: str = "central"
    omega_star: float = 1e-3
    out: str = "run"
    threads: int = 2
    override_structural: bool = False
    n_tests: int = 25

    def __post_init__(self):
        if (self.problem_file is None) == (self.bench is None):
            raise ConfigError("give exactly one of a problem file or --bench NAME")
        if self.nx < 4 or self.ny < 4:
            raise ConfigError("grid sizes must be at least 4")
        for name in ("eps0", "omega_star"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.eps_floor is not None and not self.eps_floor > 0:
            raise ConfigError("eps floor must be positive")
        if self.cauchy_tol is not None and not self.cauchy_tol > 0:
            raise ConfigError("cauchy tolerance must be positive")
        if not 0 < self.eps_ratio < 1:
            raise ConfigError("eps ratio must lie in (0, 1)")
        if self.scheme not in ("central", "upwind"):
            raise ConfigError(f"unknown scheme {self.scheme!r}")
        if self.threads < 1:
            raise ConfigError("threads must be at least 1")

    def schedule(self) -> EpsilonSchedule:
        try:
            return EpsilonSchedule(self.eps0, self.eps_ratio, self.eps_floor, self.cauchy_tol)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict:
        return {
            "problem_file": self.problem_file, "bench": self.bench, "params": dict(self.params),
            "grid": [self.nx, self.ny], "eps0": self.eps0, "eps_ratio": self.eps_ratio,
            "eps_floor": self.eps_floor, "cauchy_tol": self.cauchy_tol, "scheme": self.scheme,
            "omega_star": self.omega_star, "threads": self.threads,
            "override_structural": self.override_structural, "n_tests": self.n_tests,
        }

    @classmethod
    def from_dict(cls, d: dict, out: str) -> "RunConfig":
        nx, ny = d["grid"]
        return cls(d["problem_file"], d["bench"], d.get("params", {}), nx, ny, d["eps0"],
                   d["eps_ratio"], d["eps_floor"], d["cauchy_tol"], d["scheme"], d["omega_star"],
                   out, d["threads"], d["override_structural"], d.get("n_tests", 25))


# --------------------------------------------------------------------------
# helpers


def _dump_json(path: Path, data) -> None:
    path.write_text(json.dumps(_jsonable(data), indent=2, sort_keys=True, allow_nan=True) + "\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.floating,)):
        return float(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (np.bool_,)):
        return bool(x)
    return x


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--param expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        try:
            out[k] = float(v)
        except ValueError:
            out[k] = v
    return out


def _load_instance(cfg: RunConfig) -> BenchmarkInstance:
    if cfg.bench is not None:
        try:
            return get_benchmark(cfg.bench, **cfg.params)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for benchmark {cfg.bench!r}: {exc}") from exc
        except BenchmarkError as exc:
            raise ConfigError(str(exc)) from exc
    path = Path(cfg.problem_file)
    try:
        spec = load_problem(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"cannot read problem file: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: JSON parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    except (ProblemError, ExpressionError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    try:
        spec = homogenize(spec)
    except ProblemError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return BenchmarkInstance(spec.name, spec)


def _strip_structural(cc: CanonicalCoefficients, omega_star: float, n: int = 256) -> dict:
    x = -np.pi + 2 * np.pi * np.arange(n) / n
    lo = -cc.y_minus
    y = np.linspace(lo, cc.y_plus, n)
    X, Y = np.meshgrid(x, y)
    s = cc.sample(X, Y)
    b0 = np.asarray(cc.b(x, np.zeros_like(x)), dtype=float) * np.ones_like(x)
    report = {
        "omega_min": float(np.min(s["omega"])),
        "b0_max": float(np.max(b0)),
        "C_max": float(np.max(s["c"])),
    }
    report["ellipticity_ok"] = report["omega_min"] >= omega_star
    report["transversality_ok"] = report["b0_max"] < 0
    report["sign_C_ok"] = report["C_max"] <= 0
    ok = report["ellipticity_ok"] and report["transversality_ok"] and report["sign_C_ok"]
    report["verdict"] = "pass" if ok else "fail"
    return report


def _structural(inst: BenchmarkInstance, cfg: RunConfig):
    """Returns ``(report dict, curve or None)``; raises StructuralFailure unless overridden."""
    if inst.kind == "strip":
        rep, curve = _strip_structural(inst.problem, cfg.omega_star), None
    else:
        spec = inst.problem
        try:
            curve = extract_interface(spec.phi, 512, box=spec.box, outer=spec.outer)
        except InterfaceError as exc:
            raise ConfigError(f"interface: {exc}") from exc
        rep = verify_structural_conditions(spec, curve).to_dict()
        rep["b0"] = compute_b0(spec, curve).values.max()
        rep["coefficient_norms"] = coefficient_norms(spec)
    if rep["verdict"] != "pass" and not cfg.override_structural:
        raise StructuralFailure(json.dumps(_jsonable(rep), sort_keys=True))
    return rep, curve


def _manifest(cfg: RunConfig, command: str, extra=None) -> dict:
    m = {"tool": "degenbvp", "version": __version__, "command": command, "config": cfg.to_dict()}
    if extra:
        m.update(extra)
    return m


def _write_estimates(out: Path, reports: dict) -> None:
    for side, rep in reports.items():
        (out / f"estimates_{side}.csv").write_text(rep.csv())


def _read_estimates(path: Path) -> list:
    with open(path) as fh:
        return [EstimateRow(*(float(r[k]) for k in ("eps", "l2", "h1", "wh2", "eps_flux")))
                for r in csv.DictReader(fh)]


# --------------------------------------------------------------------------
# pipeline stages


def run_solve(cfg: RunConfig) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    inst = _load_instance(cfg)
    structural, curve = _structural(inst, cfg)
    schedule = cfg.schedule()
    try:
        results = run_both_sides(inst.problem, schedule, cfg.nx, cfg.ny, cfg.scheme,
                                 threads=cfg.threads)
        if "minus" in results:
            full = None
            if inst.kind == "domain":
                full = build_cutcell_grid(inst.problem, "full", cfg.nx, cfg.ny)
            glued = glue_solutions(results["plus"].limit.field, results["minus"].limit.field, full)
        else:
            glued = None
    except (SolverError, GlueError, GridError) as exc:
        raise _SolverFailure(str(exc)) from exc

    for side, res in results.items():
        save_field(res.limit.field, out / f"u_{side}")
    if glued is not None:
        save_field(glued.u, out / "u")
    reports = {side: estimate_report(res, inst.problem if inst.kind == "domain" else None, curve,
                                     conditions_ok=structural["verdict"] == "pass")
               for side, res in results.items()}
    _write_estimates(out, reports)
    report = {
        "sides": {side: res.to_dict() for side, res in results.items()},
        "eps_history": {side: res.eps for side, res in results.items()},
        "cauchy_diffs": {side: res.cauchy_diffs for side, res in results.items()},
        "stop_reason": {side: res.stop_reason for side, res in results.items()},
        "trace_mismatch": None if glued is None else glued.trace_mismatch,
        "outer_trace": None if glued is None else glued.outer_trace,
        "structural": structural,
        "facts": inst.facts_dict(),
    }
    _dump_json(out / "report.json", report)
    _dump_json(out / "manifest.json", _manifest(cfg, "solve"))
    return {"instance": inst, "results": results, "glued": glued, "curve": curve,
            "structural": structural, "report": report}


class _SolverFailure(Exception):
    pass


def run_verify(out_dir: str, n_tests: int | None = None, solved: dict | None = None) -> dict:
    """Verdicts for a solve bundle; raises VerdictFailure if any check fails."""
    out = Path(out_dir)
    try:
        manifest = json.loads((out / "manifest.json").read_text())
        report = json.loads((out / "report.json").read_text())
    except FileNotFoundError as exc:
        raise ConfigError(f"not a solve bundle: {exc}") from exc
    cfg = RunConfig.from_dict(manifest["config"], str(out))
    conditions_ok = report["structural"]["verdict"] == "pass"
    verdict = {"checks": {}, "structural": report["structural"]["verdict"]}
    if "coefficient_norms" in report["structural"]:
        # reported next to the boundedness ratios so they can be read against data size
        verdict["coefficient_norms"] = report["structural"]["coefficient_norms"]
    failed = []
    for side in sorted(report["sides"]):
        rows = _read_estimates(out / f"estimates_{side}.csv")
        fn = report["sides"][side]["source_l2"]
        checks = {}
        if len(rows) >= 4:
            checks["uniform_h1"] = _boundedness("uniform_h1", [r.eps for r in rows], [r.h1 for r in rows],
                                                fn, conditions_ok).to_dict()
            checks["weighted_h2"] = _boundedness("weighted_h2", [r.eps for r in rows],
                                                 [r.wh2 for r in rows], fn, conditions_ok).to_dict()
        eps = np.array([r.eps for r in rows])
        flux = np.array([r.eps_flux for r in rows])
        if len(rows) >= 5 and np.all(np.isfinite(flux)) and np.log10(eps.max() / eps.min()) >= 2 - 1e-9:
            checks["flux_decay"] = flux_decay_fit(eps, flux).to_dict()
        diffs = report["cauchy_diffs"][side]
        checks["cauchy"] = {
            "stop_reason": report["stop_reason"][side],
            "verdict": "pass" if (len(diffs) < 2 or diffs[-1] < diffs[0] or diffs[-1] == 0) else "fail",
        }
        if report["trace_mismatch"] is not None:
            checks["trace"] = {"trace_mismatch": report["trace_mismatch"],
                               "verdict": "pass" if report["trace_mismatch"] <= 1e-8 else "fail"}
        for name, c in checks.items():
            if c["verdict"] == "fail":
                failed.append(f"{side}:{name}")
        verdict["checks"][side] = checks

    inst = solved["instance"] if solved else _load_instance(cfg)
    if inst.kind == "domain" and (out / "u.json").exists():
        spec = inst.problem
        if solved:
            u, curve = solved["glued"], solved["curve"]
        else:
            parts = {}
            for side in ("plus", "minus"):
                values, meta = load_field_values(out / f"u_{side}")
                parts[side] = attach(values, meta, build_cutcell_grid(spec, side, cfg.nx, cfg.ny))
            u = glue_solutions(parts["plus"], parts["minus"],
                               build_cutcell_grid(spec, "full", cfg.nx, cfg.ny))
            curve = extract_interface(spec.phi, 512, box=spec.box, outer=spec.outer)
        rr = weak_residual(u, spec, n_tests or cfg.n_tests, curve=curve)
        res = rr.to_dict()
        res["verdict"] = "pass" if rr.max <= 1e-3 else "fail"
        verdict["weak_residual"] = res
        if res["verdict"] == "fail":
            failed.append("weak_residual")
    verdict["failed"] = failed
    verdict["verdict"] = "pass" if not failed else "fail"
    _dump_json(out / "verdict.json", verdict)
    if failed:
        raise VerdictFailure(", ".join(failed))
    return verdict


def run_transform(cfg: RunConfig, d: float | None, m: int = 64) -> dict:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    inst = _load_instance(cfg)
    if inst.kind == "strip":
        cc = inst.problem
        X = -np.pi + 2 * np.pi * np.arange(cfg.nx) / cfg.nx
        Y = np.linspace(-cc.y_minus, cc.y_plus, cfg.ny + 1)
        diag = {"d0": None, "note": "instance is given in strip form"}
        b0 = {"x": X, "b0": np.asarray(cc.b(X, np.zeros_like(X))) * np.ones_like(X)}
    else:
        spec = inst.problem
        try:
            curve = extract_interface(spec.phi, 512, box=spec.box, outer=spec.outer)
            if d is None:
                d = 0.5 / max(float(np.max(np.abs(curve.curvature))), 1e-12)
                d = min(d, _inner_distance(spec, curve))
            chart = build_tubular_chart(curve, d, m)
            tc = transform_coefficients(spec, chart)
            psi = solve_psi_characteristics(tc)
            cc = canonical_coefficients(tc, psi, cfg.omega_star)
        except (InterfaceError, TransformError) as exc:
            raise _SolverFailure(str(exc)) from exc
        X, Y = cc.table["X"], cc.table["Y"]
        diag = cc.diagnostics
        bs = compute_b0(spec, curve)
        b0 = {"x": 2 * np.pi * bs.s / curve.length - np.pi, "s": bs.s, "b0": bs.values}
    XX, YY = np.meshgrid(X, Y)
    s = cc.sample(XX, YY)
    with open(out / "canonical.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "omega", "a", "b", "c"])
        for row in zip(XX.ravel(), YY.ravel(), s["omega"].ravel(), s["a"].ravel(), s["b"].ravel(),
                       s["c"].ravel()):
            w.writerow([repr(float(v)) for v in row])
    with open(out / "b0.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        cols = list(b0)
        w.writerow(cols)
        for row in zip(*(b0[c] for c in cols)):
            w.writerow([repr(float(v)) for v in row])
    _dump_json(out / "transform.json", {"diagnostics": diag, "facts": inst.facts_dict()})
    _dump_json(out / "manifest.json", _manifest(cfg, "transform", {"d": d, "rows_per_side": m}))
    return diag


def _inner_distance(spec, curve) -> float:
    """Distance from the interface to the outer boundary (keeps the chart inside the domain)."""
    bx, by = spec.outer.boundary_points(512)
    p = curve.points
    d2 = (p[:, None, 0] - bx[None]) ** 2 + (p[:, None, 1] - by[None]) ** 2
    return 0.9 * float(np.sqrt(d2.min()))


# --------------------------------------------------------------------------
# argument parsing


def _common_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--grid", nargs=2, type=int, metavar=("NX", "NY"), default=None)
    p.add_argument("--eps0", type=float, default=None, help="first eps (default 0.1)")
    p.add_argument("--eps-ratio", type=float, default=None, help="eps reduction factor (default 0.5)")
    p.add_argument("--eps-floor", type=float, default=None,
                   help="smallest eps (default max(1e-5, h_y), or the benchmark's own floor)")
    p.add_argument("--cauchy-tol", type=float, default=None, help="Cauchy stop tolerance (default 1e-4)")
    p.add_argument("--no-cauchy", action="store_true", help="run the full eps schedule")
    p.add_argument("--scheme", choices=("central", "upwind"), default="central")
    p.add_argument("--omega-star", type=float, default=1e-3)
    p.add_argument("--out", default="run")
    p.add_argument("--threads", type=int, default=2)
    p.add_argument("--override-structural", action="store_true",
                   help="continue even if the structural conditions fail")
    p.add_argument("--n-tests", type=int, default=25, help="bump test functions for the weak residual")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="benchmark parameter")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common_parser()
    parser = argparse.ArgumentParser(prog="degenbvp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"degenbvp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="run the eps continuation and glue")
    s.add_argument("problem", nargs="?", help="JSON problem file")
    s.add_argument("--bench", help="benchmark name instead of a problem file")

    v = sub.add_parser("verify", parents=[common], help="check estimates of a solve bundle")
    v.add_argument("bundle", help="directory written by solve")

    b = sub.add_parser("bench", help="built-in benchmarks")
    bsub = b.add_subparsers(dest="bench_command", required=True)
    bsub.add_parser("list", help="list benchmarks")
    br = bsub.add_parser("run", parents=[common], help="solve and verify a benchmark")
    br.add_argument("name")

    t = sub.add_parser("transform", parents=[common], help="dump canonical strip coefficients")
    t.add_argument("problem", nargs="?", help="JSON problem file")
    t.add_argument("--bench", help="benchmark name instead of a problem file")
    t.add_argument("--d", type=float, default=None, help="chart half-width")
    t.add_argument("--rows", type=int, default=64, help="chart rows on each side")
    return parser


_GLOBAL_DEFAULTS = {"grid": (128, 128), "eps0": 0.1, "eps_ratio": 0.5, "eps_floor": None,
                    "cauchy_tol": 1e-4}


def _config(args, problem=None, bench=None) -> RunConfig:
    """Explicit flags win over benchmark defaults, which win over the global defaults."""
    params = _parse_params(args.param)
    settings = dict(_GLOBAL_DEFAULTS)
    if bench is not None:
        try:
            settings.update(get_benchmark(bench, **params).defaults)
        except TypeError as exc:
            raise ConfigError(f"bad parameters for benchmark {bench!r}: {exc}") from exc
        except BenchmarkError as exc:
            raise ConfigError(str(exc)) from exc
    for key in ("grid", "eps0", "eps_ratio", "eps_floor", "cauchy_tol"):
        if getattr(args, key) is not None:
            settings[key] = getattr(args, key)
    if args.no_cauchy:
        settings["cauchy_tol"] = None
    nx, ny = settings["grid"]
    return RunConfig(problem, bench, params, nx, ny, settings["eps0"], settings["eps_ratio"],
                     settings["eps_floor"], settings["cauchy_tol"], args.scheme, args.omega_star,
                     args.out, args.threads, args.override_structural, args.n_tests)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "bench" and args.bench_command == "list":
            for name, desc in list_benchmarks():
                print(f"{name:16s} {desc}")
            return EXIT_OK
        if args.command == "solve":
            solved = run_solve(_config(args, args.problem, args.bench))
            print(json.dumps(_jsonable({"stop_reason": solved["report"]["stop_reason"],
                                        "trace_mismatch": solved["report"]["trace_mismatch"]}),
                             sort_keys=True))
            return EXIT_OK
        if args.command == "verify":
            verdict = run_verify(args.bundle, args.n_tests)
            print(json.dumps({"verdict": verdict["verdict"]}))
            return EXIT_OK
        if args.command == "bench":
            cfg = _config(args, None, args.name)
            solved = run_solve(cfg)
            verdict = run_verify(cfg.out, cfg.n_tests, solved)
            print(json.dumps({"benchmark": args.name, "verdict": verdict["verdict"]}))
            return EXIT_OK
        if args.command == "transform":
            diag = run_transform(_config(args, args.problem, args.bench), args.d, args.rows)
            print(json.dumps(_jsonable(diag), sort_keys=True))
            return EXIT_OK
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StructuralFailure as exc:
        print(f"structural conditions violated: {exc}", file=sys.stderr)
        return EXIT_STRUCTURAL
    except _SolverFailure as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except VerdictFailure as exc:
        print(f"verification failed: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    parser.error("unknown command")
    return EXIT_CONFIG


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
