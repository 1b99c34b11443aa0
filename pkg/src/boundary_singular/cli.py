"""Command line front end: ``boundary-singular <subcommand> ...``.

Every run writes CSV field files and one ``report.json`` into its output
directory, which defaults to ``$BOUNDARY_SINGULAR_OUT/<subcommand>``
(``./runs`` when the variable is unset).  The exit code is 0 exactly when
every check requested by the run passes; configuration errors exit with 2.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import acceptance, glue
from .acceptance import _plain
from .errors import BoundarySingularError, ConfigError
from .sphere import ExponentParams

OUT_ENV = "BOUNDARY_SINGULAR_OUT"


@dataclass
class RunConfig:
    subcommand: str
    params: dict = field(default_factory=dict)
    seed: int = 0
    out: str = ""

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls(**json.loads(text))


@dataclass
class RunReport:
    config: RunConfig
    fits: dict = field(default_factory=dict)
    logs: dict = field(default_factory=dict)
    checks: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)
    files: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "fits": _plain(self.fits), "logs": _plain(self.logs),
                "checks": {k: bool(v) for k, v in self.checks.items()}, "passed": self.passed,
                "files": list(self.files), "timings": _plain(self.timings)}


def output_root() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def write_csv(path: Path, header, columns) -> None:
    """Columns of equal length; floats written with round-trip precision."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def write_report(report: RunReport, out: Path) -> Path:
    path = out / "report.json"
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")
    return path


def _floats(text: str) -> list:
    try:
        return [float(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError(f"expected a comma separated list of numbers, got {text!r}") from exc


def _grid_csv(out: Path, name: str, t, alpha, values, label: str) -> str:
    T, A = np.meshgrid(t, alpha, indexing="ij")
    write_csv(out / name, ["t", "alpha", label], [T.ravel(), A.ravel(), np.asarray(values).ravel()])
    return name


# -- subcommands --------------------------------------------------------------

def run_cell_separable(args, report: RunReport, out: Path) -> None:
    from .separable import solve_phip, verify_bifurcation

    N, p = args.dim, args.p
    params = _exponents(N, p)
    if not p > params.p_critical:
        raise ConfigError(f"p must exceed (N+1)/(N-1) = {params.p_critical:g}, got {p:g}")
    t0 = time.perf_counter()
    res = solve_phip(params)
    report.timings["solve"] = time.perf_counter() - t0
    a = res.profile.grid.alpha
    write_csv(out / "phi.csv", ["alpha", "phi"], [a, res.profile.values])
    report.files.append("phi.csv")
    report.fits.update({"s_star": res.s_star, "residual": res.residual, "fd_defect": res.fd_defect,
                        "max_phi": float(np.max(res.profile.values)), "lambda_p": params.lambda_p})
    report.checks["shooting_residual<=1e-8"] = res.residual <= 1e-8
    report.checks["phi>0"] = bool(np.all(res.profile.values[:-1] > 0))
    if args.sweep:
        ps = _floats(args.sweep)
        for q in ps:
            if not q > params.p_critical:
                raise ConfigError(f"p must exceed (N+1)/(N-1) = {params.p_critical:g}, got {q:g}")
        t0 = time.perf_counter()
        fit = verify_bifurcation(N, ps)
        report.timings["sweep"] = time.perf_counter() - t0
        report.fits["bifurcation"] = {"p": fit.p, "amplitude": fit.amplitude, "ratio": fit.ratio,
                                      "variation": fit.variation, "monotone": fit.monotone}
        if fit.variation is not None:
            report.checks["bifurcation_variation<0.05"] = fit.variation < 0.05


def run_cell_critical(args, report: RunReport, out: Path) -> None:
    from .critical import assemble_u1_critical, auto_t_star, fixed_point_solve

    N = args.dim
    if N < 2:
        raise ConfigError(f"dimension must satisfy N >= 2, got {N}")
    sigma = (N - 1) / 2 + 0.25 if args.sigma is None else args.sigma
    if not (N - 1) / 2 < sigma < (N + 1) / 2:
        raise ConfigError(f"σ must satisfy (N−1)/2 < σ < (N+1)/2 = ({(N - 1) / 2:g}, {(N + 1) / 2:g}), "
                          f"got {sigma:g}")
    if not N * args.tstar - 1 - sigma > 0:
        raise ConfigError(f"t_* must satisfy N t_* − 1 − σ > 0, got t_* = {args.tstar:g}")
    t0 = time.perf_counter()
    if args.auto_tstar:
        cell = auto_t_star(N, sigma=sigma, start=args.tstar)
    else:
        cell = fixed_point_solve(N, args.tstar, sigma)
    report.timings["solve"] = time.perf_counter() - t0
    fit = assemble_u1_critical(cell)
    g = cell.grid
    report.files.append(_grid_csv(out, "phi.csv", g.t, g.alpha, cell.phi, "phi"))
    report.fits.update({"t_star": g.t_star, "T": g.T, "a_N": cell.a_N, "b_N": cell.b_N,
                        "slope": fit.slope, "slope_window": list(fit.window),
                        "amplitude": fit.amplitude, "shape_defect": fit.shape_defect,
                        "lipschitz": cell.lipschitz, "fixed_point_residual": cell.fixed_point_residual,
                        "orthogonality": cell.orthogonality(), "pde_residual": cell.pde_residual,
                        "t1_constant": cell.t1_constant, "t2_constant": cell.t2_constant})
    report.logs["contraction"] = cell.contraction_log
    b = (N - 1) / 2
    report.checks["contraction<1"] = cell.lipschitz < 1
    report.checks["fixed_point_residual<=1e-6"] = cell.fixed_point_residual <= 1e-6
    report.checks["slope=-(N-1)/2+-0.05"] = abs(fit.slope + b) <= 0.05
    report.checks["orthogonality<=1e-8"] = cell.orthogonality() <= 1e-8


def run_cell_connection(args, report: RunReport, out: Path) -> None:
    from .connection import solve_connection

    params = _exponents(args.dim, args.p)
    t0 = time.perf_counter()
    cell = solve_connection(params, args.delta, args.delta_prime)
    report.timings["solve"] = time.perf_counter() - t0
    g = cell.grid
    report.files.append(_grid_csv(out, "u.csv", g.t, g.alpha, g.physical(cell.u_grid), "u"))
    agree = abs(cell.a_p - cell.a_p_fit) / abs(cell.a_p)
    m, N = params.m, params.N
    report.fits.update({"delta": cell.delta, "delta_prime": cell.delta_prime, "a_p": cell.a_p,
                        "a_p_fit": cell.a_p_fit, "a_p_literal": cell.a_p_literal,
                        "a_agreement": agree, "inner_slope": cell.inner_slope,
                        "outer_slope": cell.outer_slope, "lipschitz": cell.lipschitz,
                        "ball_radius": cell.ball_radius, "v_norm": cell.v_norm,
                        "slow_exponent": cell.slow_exponent, "inner_ratio": cell.inner_ratio})
    report.logs["newton"] = cell.history
    report.logs["widening"] = cell.widening_log
    report.checks["a_p>0"] = cell.a_p > 0
    report.checks["a_estimates_within_2%"] = agree <= 0.02
    report.checks["inner_slope=-2/(p-1)+-2%"] = abs(cell.inner_slope + m) <= 0.02 * m
    report.checks["outer_slope=-(N-1)+-2%"] = abs(cell.outer_slope + (N - 1)) <= 0.02 * (N - 1)


def run_glue(args, report: RunReport, out: Path) -> None:
    pts = _floats(args.points)
    cfg = glue.GlueConfig(domain=args.domain, singular_points=pts, p=args.p, eps=args.eps, R=args.R)
    cfg.validate()
    n = cfg.n
    if not math.isclose(cfg.p, (n + 1) / (n - 1)):
        raise ConfigError(f"gluing is implemented at p = (n+1)/(n-1) = {(n + 1) / (n - 1):g} only, "
                          f"got p = {cfg.p:g}")
    if cfg.domain != "disk":
        raise ConfigError("gluing is implemented on the disk only (the ball has charts and errors only)")
    if not 1 <= args.stages <= len(pts):
        raise ConfigError(f"stages must lie in [1, number of points] = [1, {len(pts)}], got {args.stages}")
    cfg = cfg.refined(args.level)
    t0 = time.perf_counter()
    profile = acceptance.critical_disk_profile()
    report.timings["profile"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    if args.stages == 1:
        sol = glue.glue_fixed_point(cfg, profile)
        stages = []
    else:
        sol, log = glue.multi_stage(cfg, profile, args.stages)
        stages = [asdict(r) for r in log]
    report.timings["solve"] = time.perf_counter() - t0
    rec = glue.verification_records(sol)
    mesh = sol.mesh
    u_nodes = sol.field.value(mesh.points) + sol.v
    u_nodes[mesh.singular_nodes] = math.inf  # nodes sitting on the singular points
    write_csv(out / "solution.csv", ["x", "y", "u", "v"],
              [mesh.points[:, 0], mesh.points[:, 1], u_nodes, sol.v])
    tri = mesh.triangles
    write_csv(out / "triangles.csv", ["i", "j", "k"], [tri[:, 0], tri[:, 1], tri[:, 2]])
    report.files += ["solution.csv", "triangles.csv"]
    slopes = []
    for pr in rec["probes"][: len(cfg.points())]:
        d, v = np.log(pr["distances"]), np.log(pr["values"])
        slopes.append(float(np.polyfit(d, v, 1)[0]))
    report.fits.update({"normal_ray_slopes": slopes, "n_nodes": mesh.n_nodes, "level": args.level})
    report.logs["verification"] = rec
    report.logs["stages"] = stages
    report.logs["corrector_ratios"] = sol.ratios
    sing = rec["probes"][: len(cfg.points())]
    regular = rec["probes"][len(cfg.points()):]
    report.checks["u>0"] = sol.min_u > 0
    report.checks["contraction<1"] = sol.lipschitz < 1
    report.checks["growth_ratio>1e2"] = all(pr["growth_ratio"] > 1e2 for pr in sing)
    report.checks["regular_decay<1e-3"] = all(pr["values"][-1] < 1e-3 for pr in regular)
    for r in stages:
        b = 2.0 ** -r["stage"]
        report.checks[f"stage{r['stage']}_bounds<=2^-i"] = (
            r["l1_increment"] <= b and r["power_increment_raised"] <= b and r["sup_v"] <= b)
    if args.plot_script:
        (out / "plot_solution.gp").write_text(_GNUPLOT)
        report.files.append("plot_solution.gp")


_GNUPLOT = """\
# gnuplot script: log-scaled glued solution on the mesh nodes
set datafile separator ','
set view map
set logscale cb
set size ratio -1
set key noautotitle
plot 'solution.csv' every ::1 using 1:2:3 with points pointtype 7 pointsize 0.2 palette
"""


def run_verify(args, report: RunReport, out: Path) -> None:
    if args.halfspace_linear:
        which = {6}
    elif args.criteria:
        which = {int(c) for c in _floats(args.criteria)}
        if not which <= set(range(1, 9)):
            raise ConfigError("criteria must be numbers in 1..8")
    else:
        which = set(range(1, 9))
    results = acceptance.run_all(quick=args.quick, which=which, seed=report.config.seed,
                                 echo=lambda line: print(line, flush=True))
    for r in results:
        report.checks[f"criterion_{r.criterion}"] = r.passed
        report.fits[f"criterion_{r.criterion}"] = r.to_dict()
        report.timings[f"criterion_{r.criterion}"] = r.seconds


def run_report(args, report: RunReport, out: Path) -> None:
    root = Path(args.root) if args.root else output_root()
    rows = []
    for path in sorted(root.rglob("report.json")):
        if path.parent == out:
            continue
        data = json.loads(path.read_text())
        rel = str(path.parent.relative_to(root))
        rows.append({"run": rel, "subcommand": data["config"]["subcommand"], "passed": data["passed"],
                     "failed": [k for k, ok in data["checks"].items() if not ok]})
        report.checks[rel] = data["passed"]
    report.logs["runs"] = rows
    for r in rows:
        tail = f" (failed: {', '.join(r['failed'])})" if r["failed"] else ""
        print(f"{'PASS' if r['passed'] else 'FAIL'} {r['run']} [{r['subcommand']}]{tail}")
    if not rows:
        print(f"no reports under {root}")


def _exponents(N, p) -> ExponentParams:
    try:
        return ExponentParams(N, p)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="boundary-singular",
                                 description="Boundary-singular solutions of Δu + u^p = 0.")
    sub = ap.add_subparsers(dest="subcommand", required=True)

    def common(sp):
        sp.add_argument("--out", help=f"output directory (default ${OUT_ENV}/<subcommand>)")
        sp.add_argument("--seed", type=int, default=0)
        return sp

    sp = common(sub.add_parser("cell-separable", help="separable half-space cell"))
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--sweep", help="comma separated exponents for the bifurcation ratio")

    sp = common(sub.add_parser("cell-critical", help="log-corrected critical cell"))
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--sigma", type=float, help="log-decay rate (default (N-1)/2 + 1/4)")
    sp.add_argument("--tstar", type=float, default=4.0)
    sp.add_argument("--auto-tstar", action="store_true", help="double t_* until the map contracts")

    sp = common(sub.add_parser("cell-connection", help="connection cell"))
    sp.add_argument("--dim", type=int, required=True)
    sp.add_argument("--p", type=float, required=True)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--delta-prime", type=float)

    sp = common(sub.add_parser("glue", help="glued solution on the disk"))
    sp.add_argument("--domain", default="disk")
    sp.add_argument("--points", default="0", help="boundary angles, comma separated")
    sp.add_argument("--p", type=float, default=3.0)
    sp.add_argument("--eps", type=float, default=1e-3)
    sp.add_argument("--R", type=float, default=0.2, help="cutoff radius")
    sp.add_argument("--stages", type=int, default=1)
    sp.add_argument("--level", type=int, default=3, help="mesh refinement level")
    sp.add_argument("--plot-script", action="store_true", help="emit a gnuplot script")

    sp = common(sub.add_parser("verify", help="acceptance suites"))
    sp.add_argument("--all", action="store_true", help="every suite (the default)")
    sp.add_argument("--quick", action="store_true", help="coarse grids")
    sp.add_argument("--halfspace-linear", action="store_true", help="weighted inverse suite only")
    sp.add_argument("--criteria", help="comma separated criterion numbers")

    sp = common(sub.add_parser("report", help="summarise existing run reports"))
    sp.add_argument("--root", help=f"directory to scan (default ${OUT_ENV})")
    return ap


_RUNNERS = {
    "cell-separable": run_cell_separable,
    "cell-critical": run_cell_critical,
    "cell-connection": run_cell_connection,
    "glue": run_glue,
    "verify": run_verify,
    "report": run_report,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    params = {k: v for k, v in vars(args).items() if k not in ("subcommand", "out", "seed")}
    out = Path(args.out) if args.out else output_root() / args.subcommand
    config = RunConfig(args.subcommand, params, args.seed, str(out))
    report = RunReport(config)
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    try:
        _RUNNERS[args.subcommand](args, report, out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except BoundarySingularError as exc:
        report.checks["completed"] = False
        report.logs["error"] = f"{type(exc).__name__}: {exc}"
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    report.timings["total"] = time.perf_counter() - t0
    write_report(report, out)
    if args.subcommand != "verify" and args.subcommand != "report":
        for k, ok in report.checks.items():
            print(f"{'PASS' if ok else 'FAIL'} {k}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
