"""Acceptance criteria 1-8 as runnable checks.

Each ``criterion_k(quick=False)`` returns a :class:`CheckResult` whose
``checks`` map names to booleans and whose ``values`` hold the measured
numbers.  ``quick=True`` uses coarser grids for the expensive suites; the
thresholds are unchanged.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import glue
from .connection import solve_connection
from .critical import G_operator, assemble_u1_critical, auto_t_star, lemma_bound
from .errors import BoundarySingularError
from .halfspace import barrier_identity_residual, manufactured_study as halfspace_study
from .separable import solve_phip, verify_bifurcation
from .sphere import AxisymGrid, ExponentParams, laplace_beltrami_matrix


@dataclass
class CheckResult:
    criterion: int
    name: str
    checks: dict
    values: dict
    seconds: float
    limit: float
    quick: bool = False

    @property
    def within_time(self) -> bool:
        return self.seconds < self.limit

    @property
    def passed(self) -> bool:
        return all(self.checks.values()) and self.within_time

    def line(self) -> str:
        failed = [k for k, ok in self.checks.items() if not ok]
        if not self.within_time:
            failed.append(f"runtime {self.seconds:.1f}s >= {self.limit:g}s")
        tail = f" (failed: {', '.join(failed)})" if failed else ""
        return (f"{'PASS' if self.passed else 'FAIL'} criterion {self.criterion} {self.name} "
                f"[{self.seconds:.2f}s / {self.limit:g}s]{tail}")

    def to_dict(self) -> dict:
        return {"criterion": self.criterion, "name": self.name, "passed": self.passed,
                "checks": {k: bool(v) for k, v in self.checks.items()},
                "values": _plain(self.values), "quick": self.quick}


def _plain(x):
    """Convert numpy containers and scalars to JSON-ready Python values."""
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return _plain(x.tolist())
    if isinstance(x, np.generic):
        return x.item()
    return x


class _Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.seconds = time.perf_counter() - self.start


_PROFILE = {}


def critical_disk_profile():
    """Spectral critical cell for N = 2, built once per process."""
    if "disk" not in _PROFILE:
        _PROFILE["disk"] = glue.critical_profile(2)
    return _PROFILE["disk"]


# -- 1 ----------------------------------------------------------------------

def eigen_residual(N: int, n: int) -> float:
    grid = AxisymGrid(N, n)
    c = grid.cos
    return float(np.max(np.abs(laplace_beltrami_matrix(grid) @ c + (N - 1) * c)))


def criterion_1(quick: bool = False, seed: int = 0) -> CheckResult:
    checks, values = {}, {}
    with _Timer() as tm:
        for N in (2, 3):
            sizes = (100, 200, 400, 800)
            errs = [eigen_residual(N, n) for n in sizes]
            rate = math.log(errs[-2] / errs[-1]) / math.log((sizes[-1] - 1) / (sizes[-2] - 1))
            values[f"N{N}"] = {"nodes": list(sizes), "residuals": errs, "rate": rate}
            checks[f"residual_N{N}<=1e-6"] = errs[-1] <= 1e-6
            checks[f"rate_N{N}_in_[1.8,2.2]"] = 1.8 <= rate <= 2.2
    return CheckResult(1, "eigenpair", checks, values, tm.seconds, 1.0, quick)


# -- 2 ----------------------------------------------------------------------

def criterion_2(quick: bool = False, seed: int = 0) -> CheckResult:
    with _Timer() as tm:
        res = solve_phip(ExponentParams(2, 3.2))
        fit = verify_bifurcation(2, [3.2, 3.1, 3.05])
    values = {"s_star": res.s_star, "residual": res.residual, "p": fit.p, "ratio": fit.ratio,
              "variation": fit.variation}
    checks = {"residual<=1e-8": res.residual <= 1e-8, "variation<0.05": fit.variation < 0.05}
    return CheckResult(2, "separable cell", checks, values, tm.seconds, 10.0, quick)


# -- 3 ----------------------------------------------------------------------

def criterion_3(quick: bool = False, seed: int = 0) -> CheckResult:
    checks, values = {}, {}
    with _Timer() as tm:
        for N in (2, 3):
            sigma = (N - 1) / 2 + 0.25
            t_star = 4.0
            t = np.arange(t_star, t_star + 200.0, 0.01)
            G = G_operator(t, np.exp(-N * t), N)
            exact = -np.exp(-N * t) * ((t - t_star) / N + 1.0 / N**2)
            err = float(np.max(np.abs(G - exact)))
            g = t ** (-1 - sigma)
            Gp = G_operator(t, g, N, 1 + sigma)
            const = float(np.max(np.abs(t**sigma * Gp)) / np.max(t ** (1 + sigma) * g))
            bound = lemma_bound(N, sigma, t_star)
            values[f"N{N}"] = {"sigma": sigma, "t_star": t_star, "closed_form_error": err,
                               "constant": const, "bound": bound}
            checks[f"closed_form_N{N}<=1e-8"] = err <= 1e-8
            checks[f"constant_N{N}<=bound"] = const <= bound
    return CheckResult(3, "G operator", checks, values, tm.seconds, 1.0, quick)


# -- 4 ----------------------------------------------------------------------

def criterion_4(quick: bool = False, seed: int = 0) -> CheckResult:
    with _Timer() as tm:
        cell = auto_t_star(2)
        fit = assemble_u1_critical(cell)
        orth = cell.orthogonality()
    values = {"t_star": cell.grid.t_star, "T": cell.grid.T, "lipschitz": cell.lipschitz,
              "fixed_point_residual": cell.fixed_point_residual, "slope": fit.slope,
              "window": list(fit.window), "orthogonality": orth,
              "pde_residual": cell.pde_residual,
              "contraction_log": cell.contraction_log}
    checks = {
        "contraction<1": cell.lipschitz < 1.0,
        "fixed_point_residual<=1e-6": cell.fixed_point_residual <= 1e-6,
        "slope=-1/2+-0.05": abs(fit.slope + 0.5) <= 0.05,
        "orthogonality<=1e-8": orth <= 1e-8,
    }
    return CheckResult(4, "critical cell", checks, values, tm.seconds, 120.0, quick)


# -- 5 ----------------------------------------------------------------------

def criterion_5(quick: bool = False, seed: int = 0) -> CheckResult:
    params = ExponentParams(2, 3.05)
    with _Timer() as tm:
        cell = solve_connection(params)
    m, N = params.m, params.N
    agree = abs(cell.a_p - cell.a_p_fit) / abs(cell.a_p)
    values = {"delta": cell.delta, "delta_prime": cell.delta_prime, "a_p": cell.a_p,
              "a_p_fit": cell.a_p_fit, "a_p_literal": cell.a_p_literal, "agreement": agree,
              "inner_slope": cell.inner_slope, "outer_slope": cell.outer_slope,
              "lipschitz": cell.lipschitz}
    checks = {
        "a_p>0": cell.a_p > 0,
        "a_estimates_within_2%": agree <= 0.02,
        "inner_slope=-2/(p-1)+-2%": abs(cell.inner_slope + m) <= 0.02 * m,
        "outer_slope=-(N-1)+-2%": abs(cell.outer_slope + (N - 1)) <= 0.02 * (N - 1),
    }
    return CheckResult(5, "connection cell", checks, values, tm.seconds, 120.0, quick)


# -- 6 ----------------------------------------------------------------------

def _barrier_points(N, n=20, seed=0):
    rng = np.random.default_rng(seed)
    a = rng.uniform(0.2, 1.3, n)
    r = rng.uniform(0.5, 2.0, n)
    pts = np.zeros((n, N))
    pts[:, 0] = r * np.sin(a)
    pts[:, -1] = r * np.cos(a)
    return pts


def criterion_6(quick: bool = False, seed: int = 0) -> CheckResult:
    checks, values = {}, {}
    hs_steps = ((0.1, 21), (0.05, 41)) if quick else ((0.1, 21), (0.05, 41), (0.025, 81))
    glue_levels = (1, 2, 3) if quick else (2, 3, 4)
    sizes = (51, 101, 201) if quick else (101, 201, 401)
    with _Timer() as tm:
        for delta in (0.0, 0.5, -0.5):
            st = halfspace_study(delta, hs_steps)
            order = float(st.orders[-1])
            values[f"halfspace_delta{delta:g}"] = {"steps": st.steps, "errors": st.errors,
                                                   "orders": st.orders}
            checks[f"halfspace_delta{delta:g}_O(h^2)"] = order >= 1.8
        for delta in (0.0, -0.5):
            st = glue.manufactured_study(delta, glue_levels)
            values[f"corrector_delta{delta:g}"] = {"levels": st.levels, "l2_errors": st.l2_errors,
                                                   "max_errors": st.max_errors, "order": st.order}
            checks[f"corrector_delta{delta:g}_O(h^2)"] = st.order >= 1.8
        for N, deltas in ((2, (0.0, 0.5, -0.5)), (3, (0.0, -1.0, 0.5))):
            pts = _barrier_points(N, seed=seed)
            for delta in deltas:
                errs = [barrier_identity_residual(delta, N, n, pts)[0] for n in sizes]
                order = math.log2(errs[-2] / errs[-1])
                values[f"barrier_N{N}_delta{delta:g}"] = {"nodes": list(sizes), "residuals": errs,
                                                          "order": order}
                checks[f"barrier_N{N}_delta{delta:g}_O(h^2)"] = order >= 1.8
    return CheckResult(6, "weighted inverse", checks, values, tm.seconds, 60.0, quick)


# -- 7 ----------------------------------------------------------------------

def criterion_7(quick: bool = False, seed: int = 0) -> CheckResult:
    levels = (3, 4) if quick else (3, 4, 5)
    distances = 10.0 ** -np.arange(1, 6)
    with _Timer() as tm:
        prof = critical_disk_profile()
        cfg = glue.GlueConfig(singular_points=[0.0], p=3.0, eps=1e-3)
        study = glue.refinement_study(cfg, prof, levels, keep=True)
        sol = study.solutions[-1]
        xi = cfg.points()[0]
        probe = glue.nontangential_probe(sol, xi, 0.0, distances)
        regular = np.array([math.cos(0.25 * math.pi), math.sin(0.25 * math.pi)])
        reg = glue.nontangential_probe(sol, regular, 0.0, distances)
        reg_cone = glue.nontangential_probe(sol, regular, 0.25 * math.pi, distances)
    first_order = bool(np.all(study.orders >= 0.9))
    values = {"levels": study.levels, "n_nodes": study.n_nodes, "defects": study.defects,
              "orders": study.orders, "min_u": study.min_u,
              "probe_singular": {"distances": distances, "values": probe.values,
                                 "growth_ratio": probe.growth_ratio, "scaled": probe.scaled},
              "probe_regular": {"x0": regular, "values": reg.values},
              "probe_regular_cone": {"values": reg_cone.values},
              "lipschitz": sol.lipschitz, "v_norm": sol.v_norm, "ball_radius": sol.ball_radius}
    checks = {
        "first_order_all_8": first_order,
        "growth_ratio>1e2": probe.growth_ratio > 1e2,
        "regular_decay<1e-3": float(reg.values[-1]) < 1e-3 and float(reg_cone.values[-1]) < 1e-3,
        "u>0": min(study.min_u) > 0,
    }
    return CheckResult(7, "glued disk", checks, values, tm.seconds, 300.0, quick)


# -- 8 ----------------------------------------------------------------------

def criterion_8(quick: bool = False, seed: int = 0) -> CheckResult:
    K = 3
    with _Timer() as tm:
        prof = critical_disk_profile()
        cfg = glue.GlueConfig(singular_points=[0.0, 2 * math.pi / 3, 4 * math.pi / 3], p=3.0,
                              R=0.4).refined(1 if quick else 2)
        sol, log = glue.multi_stage(cfg, prof, K)
    rows = [{"stage": r.stage, "eps": r.eps, "halvings": r.halvings, "radius": r.radius,
             "l1_increment": r.l1_increment, "power_increment": r.power_increment,
             "power_increment_raised": r.power_increment_raised, "sup_v": r.sup_v,
             "lipschitz": r.lipschitz} for r in log]
    checks = {}
    for r in log:
        b = 2.0**-r.stage
        checks[f"stage{r.stage}_AA"] = r.l1_increment <= b
        checks[f"stage{r.stage}_BB"] = r.power_increment_raised <= b and r.power_increment <= b
        checks[f"stage{r.stage}_CC"] = r.sup_v <= b
    l1 = [r.l1_increment for r in log]
    checks["summable_increments"] = len(log) == K and sum(l1) < sum(2.0**-i for i in range(1, K + 1))
    values = {"stages": rows, "l1_sum": sum(l1), "min_u": sol.min_u}
    return CheckResult(8, "staged construction", checks, values, tm.seconds, 900.0, quick)


CRITERIA = (criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6,
            criterion_7, criterion_8)


def run_all(quick: bool = False, which=None, seed: int = 0, echo=None) -> list:
    """Run the selected criteria (1-based numbers); ``echo`` receives each result line.

    A criterion whose solver raises is reported as failed with the error text.
    """
    out = []
    for k, fn in enumerate(CRITERIA, start=1):
        if which is not None and k not in which:
            continue
        t0 = time.perf_counter()
        try:
            res = fn(quick, seed)
        except BoundarySingularError as exc:
            name = fn.__name__
            res = CheckResult(k, name, {"completed": False}, {"error": f"{type(exc).__name__}: {exc}"},
                              time.perf_counter() - t0, math.inf, quick)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
