"""Command line entry point.

Exit codes: 0 success, 1 invalid input or operational failure, 2 a check ran
and failed.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
import tempfile
from fractions import Fraction
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__
from .estimates import (
    check_energy_truncation,
    check_power_energy,
    lumped_weights,
    tail_exponent,
    weak_solution_exponents,
)
from .expressions import ExpressionError, parse_scalar_function
from .measures import ProblemData
from .mesh import MeshError, build_box_mesh, load_mesh, refine_uniform
from .nonlinearity import Nonlinearity
from .oracle import fixed_point_exact, path3, random_graph
from .solver import (
    DEFAULT_SCHEDULE,
    DataError,
    bracket_solutions,
    discretize,
    manufactured_data,
    renormalized_defect,
    solve,
    solve_mixed,
)

OUTPUT_ENV = "SINGROBIN_OUTPUT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(1)


# ------------------------------------------------------------------ output

def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, Fraction):
        return str(obj)
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return obj


def atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")


def field_csv(vertices: np.ndarray, values: np.ndarray) -> str:
    d = vertices.shape[1]
    head = ",".join(["vertex"] + [f"x{k + 1}" for k in range(d)] + ["value"])
    lines = [head]
    for i, (p, v) in enumerate(zip(vertices, values)):
        lines.append(",".join([str(i)] + ["%.17g" % c for c in p] + ["%.17g" % v]))
    return "\n".join(lines) + "\n"


def read_field_csv(text: str):
    """Inverse of :func:`field_csv`: returns (ids, coordinates, values)."""
    rows = [ln.split(",") for ln in text.strip().splitlines()[1:]]
    ids = np.array([int(r[0]) for r in rows])
    coords = np.array([[float(c) for c in r[1:-1]] for r in rows])
    vals = np.array([float(r[-1]) for r in rows])
    return ids, coords, vals


def table_csv(header, rows) -> str:
    out = [",".join(header)]
    out += [",".join("%.17g" % v for v in row) for row in rows]
    return "\n".join(out) + "\n"


# ------------------------------------------------------------------ config

def load_config(path: str) -> dict:
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc.strerror}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise UsageError(f"config {path} is not valid TOML: {exc}") from exc


def build_mesh(cfg: dict, base: Path):
    sec = cfg.get("mesh", {})
    if ("box" in sec) == ("file" in sec):
        raise UsageError("[mesh] needs exactly one of 'box' or 'file'")
    try:
        if "box" in sec:
            b = sec["box"]
            mesh = build_box_mesh(int(b["dim"]), b["lower"], b["upper"], int(b.get("divisions", 8)))
        else:
            p = Path(sec["file"])
            p = p if p.is_absolute() else base / p
            try:
                mesh = load_mesh(p.read_text())
            except OSError as exc:
                raise UsageError(f"cannot read mesh file {p}: {exc.strerror}") from exc
        for _ in range(int(sec.get("refine", 0))):
            mesh = refine_uniform(mesh)
    except KeyError as exc:
        raise UsageError(f"[mesh] box is missing key {exc}") from exc
    return mesh


def build_data(cfg: dict, mesh) -> ProblemData:
    sec = cfg.get("data", {})
    known = {"f", "F", "beta", "h", "a", "atoms", "Lambda"}
    extra = set(sec) - known
    if extra:
        raise UsageError(f"[data] has unknown keys {sorted(extra)}")
    return ProblemData.from_values(
        mesh, f=sec.get("f", 0.0), F=sec.get("F"), beta=sec.get("beta", 1.0), h=sec.get("h", 0.0),
        a=sec.get("a"), atoms=[tuple(a) for a in sec.get("atoms", [])], Lambda=sec.get("Lambda"),
    )


def build_nonlinearity(sec: dict) -> Nonlinearity:
    kind = sec.get("kind", "power")
    try:
        if kind == "power":
            return Nonlinearity.power(float(sec.get("gamma", 1.0)), float(sec.get("c", sec.get("c1", 1.0))))
        if kind == "mixed":
            return Nonlinearity.mixed_power(float(sec["gamma"]), float(sec["gamma2"]),
                                            float(sec.get("c1", 1.0)), float(sec.get("c2", 1.0)))
        if kind == "custom":
            fn, dfn = parse_scalar_function(sec["expr"])
            return Nonlinearity.custom(fn, float(sec["gamma"]), float(sec["c1"]), float(sec["c2"]), dfn=dfn)
    except KeyError as exc:
        raise UsageError(f"[nonlinearity] kind {kind!r} needs key {exc}") from exc
    raise UsageError(f"[nonlinearity] unknown kind {kind!r} (power, mixed, custom)")


def _solver_kwargs(cfg: dict) -> dict:
    sec = cfg.get("solver", {})
    kw = {
        "schedule": tuple(sec.get("schedule", DEFAULT_SCHEDULE)),
        "tol": float(sec.get("tol", 1e-8)),
        "tol_outer": float(sec.get("tol_outer", 1e-9)),
        "tol_mono": float(sec.get("tol_mono", 1e-7)),
        "omega": float(sec.get("omega", 0.5)),
    }
    for key in ("tol", "tol_outer", "tol_mono", "omega"):
        if not kw[key] > 0:
            raise UsageError(f"[solver] {key} must be positive")
    return kw


def _output_dir(args, cfg) -> Path:
    out = args.output or cfg.get("output", {}).get("directory") or os.environ.get(OUTPUT_ENV) or "singrobin-out"
    return Path(out)


def _setup(args):
    cfg = load_config(args.config)
    base = Path(args.config).resolve().parent
    mesh = build_mesh(cfg, base)
    data = build_data(cfg, mesh)
    g = build_nonlinearity(cfg.get("nonlinearity", {}))
    bad = g.envelope_violations()
    if bad:
        raise UsageError(f"nonlinearity violates c1 <= g(y) y^gamma <= c2 (first at y={bad[0]:.3g})")
    mode = cfg.get("solver", {}).get("mode", "iterative")
    problem = discretize(mesh, data, tol=float(cfg.get("solver", {}).get("cg_tol", 1e-12)), mode=mode)
    return cfg, mesh, data, g, problem


def _solve(problem, g, cfg):
    kw = _solver_kwargs(cfg)
    if g.kind == "mixed":
        return solve_mixed(problem, g.components[0], g.components[1], kw["schedule"], tol=kw["tol"])
    return solve(problem, g, **kw)


# ------------------------------------------------------------------ commands

def cmd_solve(args) -> int:
    cfg, mesh, data, g, problem = _setup(args)
    report = _solve(problem, g, cfg)
    out = _output_dir(args, cfg)
    atomic_write(out / "field.csv", field_csv(mesh.vertices, report.u))
    write_json(out / "report.json", {"command": "solve", "solver": report.summary(),
                                     "mixed_checks": report.extras.get("mixed_checks")})
    print(f"solved {mesh.n_vertices} vertices: min u = {report.u.min():.6g}, max u = {report.u.max():.6g}")
    ok = report.monotone and all(c["comparison_ok"] and c["envelope_ok"]
                                 for c in report.extras.get("mixed_checks", []))
    return 0 if ok else 2


def cmd_verify(args) -> int:
    cfg, mesh, data, g, problem = _setup(args)
    report = _solve(problem, g, cfg)
    u = report.u
    verdicts = check_energy_truncation(problem, g, u)
    tol = _solver_kwargs(cfg)["tol"]
    scale = problem.mu_mass + report.hg_l1
    _, nu_top = renormalized_defect(problem, g, u, float(u.max()))
    k_grid = float(u.max()) * 2.0 ** -np.arange(8, -1, -1)
    defects = [renormalized_defect(problem, g, u, float(k))[1] for k in k_grid]
    checks = {
        "energy_truncation": [v.to_dict() for v in verdicts],
        "defect_at_max": {"value": nu_top, "bound": 10 * tol * scale, "passed": nu_top <= 10 * tol * scale},
        "positive": bool(np.all(u > 0)),
        "monotone": report.monotone,
    }
    if g.kind != "mixed":
        u_sub, u_super, viol = bracket_solutions(problem, g, u, _solver_kwargs(cfg)["schedule"], tol=tol)
        checks["bracket"] = {"violations": viol, "passed": not viol}
    if problem.mu_mass == 0 and not np.any(problem.load):
        checks["power_energy"] = check_power_energy(problem, u, g.gamma).to_dict()
    d = mesh.dim
    ex = weak_solution_exponents(d, g.gamma)
    if d >= 3:
        tails = tail_exponent(np.abs(u), lumped_weights(mesh), float(ex["m_interior"]))
        out_t = _output_dir(args, cfg) / "tail.csv"
        atomic_write(out_t, table_csv(["t", "lambda", "t_r_lambda"],
                                      zip(tails["t"], tails["lambda"], tails["weighted"])))
        checks["tail_interior"] = {"sup": tails["sup"], "slope": tails["slope"]}
    out = _output_dir(args, cfg)
    atomic_write(out / "field.csv", field_csv(mesh.vertices, u))
    atomic_write(out / "defect.csv", table_csv(["k", "defect"], zip(k_grid, defects)))
    write_json(out / "report.json", {"command": "verify", "solver": report.summary(), "checks": checks,
                                     "exponents": ex, "mixed_checks": report.extras.get("mixed_checks")})
    passed = (all(v.passed for v in verdicts) and checks["defect_at_max"]["passed"] and checks["positive"]
              and checks.get("bracket", {"passed": True})["passed"] and report.monotone)
    print(f"verify: {'all checks passed' if passed else 'CHECK FAILED'} (see {out / 'report.json'})")
    return 0 if passed else 2


def cmd_mc_check(args) -> int:
    from .stochastic import PathConfig, calibrate_local_time, estimate_representation

    cfg, mesh, data, g, problem = _setup(args)
    report = _solve(problem, g, cfg)
    sec = cfg.get("mc", {})
    pc = PathConfig(dt=float(sec.get("dt", 1e-4)), horizon_eps=float(sec.get("horizon_eps", 1e-3)),
                    n_paths=int(sec.get("n_paths", 10000)), seed=int(sec.get("seed", 0)),
                    max_dt=float(sec.get("max_dt", 1e-2)))
    calib = None
    if sec.get("calibrate", True):
        cal_paths = int(sec.get("calibration_paths", min(pc.n_paths, 10000)))
        beta_c = float(np.mean(data.beta[mesh.boundary_vertex_flags]))
        calib = calibrate_local_time(mesh, pc.with_(n_paths=cal_paths), beta_c)
        pc = pc.with_(local_time_scale=calib.local_time_scale)
    centre = 0.5 * (np.asarray(mesh.box.lower) + np.asarray(mesh.box.upper))
    probes = [np.asarray(p, dtype=float) for p in sec.get("probes", [centre.tolist()])]
    sup_u = float(np.max(np.abs(report.u)))
    rows, passed = [], True
    for x in probes:
        est = estimate_representation(x, mesh, data, g, report.u, pc)
        fem = float(mesh.interpolate(report.u, x[None, :])[0])
        allowance = sup_u * (math.sqrt(pc.dt) + mesh.size) + est.bias_bound
        ok = abs(est.mean - fem) <= 3 * est.stderr + allowance
        passed &= ok
        rows.append({"probe": x.tolist(), "fem": fem, "estimate": est.to_dict(), "allowance": allowance, "passed": ok})
    drift_ok = calib is None or calib.drift is None or calib.drift < 0.05
    out = _output_dir(args, cfg)
    write_json(out / "report.json", {"command": "mc-check", "solver": report.summary(), "probes": rows,
                                     "calibration": calib.to_dict() if calib else None,
                                     "config": {"dt": pc.dt, "n_paths": pc.n_paths, "seed": pc.seed,
                                                "horizon_eps": pc.horizon_eps, "max_dt": pc.max_dt}})
    for r in rows:
        e = r["estimate"]
        print(f"x={r['probe']}: MC {e['mean']:.6f} +- {e['stderr']:.2e}, FEM {r['fem']:.6f}, "
              f"{'ok' if r['passed'] else 'FAIL'}")
    if calib:
        print(f"local time scale {calib.local_time_scale:.4f} (dt drift {calib.drift:.2%})")
    return 0 if passed and drift_ok else 2


def _fmt(x) -> str:
    return str(x) if isinstance(x, Fraction) else ("inf" if x == math.inf else f"{x}")


def cmd_exponents(args) -> int:
    gamma = Fraction(args.gamma) if "/" in args.gamma else Fraction(args.gamma).limit_denominator(10**9)
    ex = weak_solution_exponents(args.d, gamma)
    m = ", ".join(_fmt(ex[k]) for k in ("m_interior", "m_grad", "m_boundary"))
    print(f"p={_fmt(ex['p'])} q={_fmt(ex['q'])} r={_fmt(ex['r'])} m=({m})")
    if not ex["in_regime"]:
        print("note: d < 3 lies outside the range where these exponents apply")
    return 0


def cmd_oracle(args) -> int:
    g = Nonlinearity.power(args.gamma, args.c)
    if args.instance == "path3":
        form = path3(beta=tuple(args.beta), h=tuple(args.h))
    else:
        form = random_graph(args.n, args.seed)
    u = fixed_point_exact(form, g)
    print("u=(" + ", ".join(f"{v:.12g}" for v in u) + ")")
    if args.output:
        write_json(Path(args.output) / "oracle.json", {"instance": args.instance, "L": form.L, "K": form.K,
                                                       "S": form.S, "mu": form.mu, "h": form.h, "u": u})
    return 0


def cmd_mms(args) -> int:
    g = Nonlinearity.power(args.gamma)
    errs, sizes = [], []
    for n in args.levels:
        mesh = build_box_mesh(args.dim, [0.0] * args.dim, [1.0] * args.dim, n)
        data = manufactured_data(mesh, args.u_star, g, beta=args.beta)
        problem = discretize(mesh, data)
        u = solve(problem, g).u
        from .expressions import parse

        e = u - parse(args.u_star)(mesh.vertices)
        H = problem.form.stiffness_identity + problem.form.mass
        errs.append(float(np.sqrt(e @ (H @ e))))
        sizes.append(mesh.size)
    orders = [math.log(errs[i] / errs[i + 1]) / math.log(sizes[i] / sizes[i + 1]) for i in range(len(errs) - 1)]
    slope = float(np.polyfit(np.log(sizes), np.log(errs), 1)[0]) if len(errs) > 1 else math.nan
    for n, h, e in zip(args.levels, sizes, errs):
        print(f"divisions {n:4d}  h={h:.4e}  H1 error {e:.6e}")
    print(f"observed orders {', '.join(f'{o:.3f}' for o in orders)}; fitted {slope:.3f}")
    if args.output:
        write_json(Path(args.output) / "mms.json", {"levels": args.levels, "sizes": sizes, "errors": errs,
                                                    "orders": orders, "fitted_order": slope})
    return 0 if slope >= args.min_order else 2


def make_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="singrobin", description="Singular Robin boundary problems: solve and verify.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("--threads", type=int, default=None, help="cap on worker threads (results do not change)")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    for name, helptext in [("solve", "solve and write the field"), ("verify", "solve and run the estimate checks"),
                           ("mc-check", "compare with Monte Carlo estimates")]:
        s = sub.add_parser(name, help=helptext)
        s.add_argument("config", help="TOML configuration file")
        s.add_argument("--output", "-o", help=f"output directory (default: ${OUTPUT_ENV} or ./singrobin-out)")

    e = sub.add_parser("exponents", help="integrability exponents for dimension d and exponent gamma")
    e.add_argument("--d", type=int, required=True)
    e.add_argument("--gamma", type=str, required=True)

    o = sub.add_parser("oracle", help="dense reference fixed point on a small graph")
    o.add_argument("--instance", choices=["path3", "random"], default="path3")
    o.add_argument("--beta", type=float, nargs=2, default=[1.0, 1.0])
    o.add_argument("--h", type=float, nargs=2, default=[1.0, 1.0])
    o.add_argument("--gamma", type=float, default=1.0)
    o.add_argument("--c", type=float, default=1.0)
    o.add_argument("--n", type=int, default=10)
    o.add_argument("--seed", type=int, default=0)
    o.add_argument("--output", "-o")

    m = sub.add_parser("mms", help="manufactured-solution convergence study")
    m.add_argument("--u-star", default="1+x1")
    m.add_argument("--dim", type=int, default=2)
    m.add_argument("--beta", type=float, default=1.0)
    m.add_argument("--gamma", type=float, default=1.0)
    m.add_argument("--levels", type=int, nargs="+", default=[4, 8, 16, 32])
    m.add_argument("--min-order", type=float, default=0.9)
    m.add_argument("--output", "-o")
    return p


COMMANDS = {"solve": cmd_solve, "verify": cmd_verify, "mc-check": cmd_mc_check, "exponents": cmd_exponents,
            "oracle": cmd_oracle, "mms": cmd_mms}


def run(argv=None) -> int:
    args = make_parser().parse_args(argv)
    if args.threads:
        import warnings

        import numba

        with warnings.catch_warnings():
            warnings.filterwarnings("ignore", message=".*TBB.*", category=numba.NumbaWarning)
            numba.set_num_threads(max(1, min(args.threads, numba.config.NUMBA_NUM_THREADS)))
    try:
        return COMMANDS[args.command](args)
    except DataError as exc:
        for v in exc.violations:
            print(f"invalid data: {v}", file=sys.stderr)
        return 1
    except (UsageError, MeshError, ExpressionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
