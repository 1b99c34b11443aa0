"""Fast-decay cell for p slightly above (N+1)/(N-1).

The cell is u = (1-chi) u0 + v with u0 = r^{-2/(p-1)} phi_p the separable
solution and v = -G(R(v)), where G is the weighted inverse of
|x|^2 Delta and

    R(v) = |x|^2 (Delta((1-chi) u0) + |(1-chi) u0 + v|^p).

Near the origin u follows u0; at infinity u ~ a_p |x|^{-N} x_N.

Perturbations of u0 that are small at the origin contain a slowly decaying
mode r^{-m} r^{s} psi_s(theta), s > 0 small.  With zero inner data (the
plain fixed point) that mode is absent and, for N = 2 and p near 3, the
far-field amplitude blows up at a finite distance instead of settling to
a_p.  A negative slow-mode coefficient at the inner end selects the
fast-decay branch; the coefficient only fixes the scale of the cell.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RectBivariateSpline
from scipy.sparse.linalg import splu

from .errors import AssemblyError, ConfigError, ContractionError, TruncationError
from .halfspace import (
    EFGrid,
    EFSolver,
    FluxDecomposition,
    WeightedField,
    chi,
    decompose,
    flux_estimates,
    weighted_norm,
    widen,
)
from .separable import ShootingResult, solve_phip
from .sphere import ExponentParams, laplace_beltrami_matrix


def check_windows(params: ExponentParams, delta: float, delta_prime: float) -> None:
    """Raise ConfigError naming the first violated constraint."""
    N, p = params.N, params.p
    if not p > params.p_critical:
        raise ConfigError(f"p must exceed (N+1)/(N-1) = {params.p_critical:g}, got {p:g}")
    if not (1 - N < delta < 1):
        raise ConfigError(f"δ must lie in (1-N, 1) = ({1 - N}, 1), got {delta:g}")
    if not delta > -params.m:
        raise ConfigError(f"δ must exceed −2/(p−1) = {-params.m:.6g}, got {delta:g}")
    if not (-N < delta_prime < 1 - N):
        raise ConfigError(f"δ′ must lie in (-N, 1-N) = ({-N}, {1 - N}), got {delta_prime:g}")
    bound = p * (1 - N) + 2
    if not delta_prime > bound:
        raise ConfigError(f"δ′ must exceed p(1−N)+2 = {bound:.6g}, got {delta_prime:g}")


def default_delta_prime(params: ExponentParams) -> float:
    """Midpoint of the admissible outer window."""
    N = params.N
    return 0.5 * ((1 - N) + max(-N, params.p * (1 - N) + 2))


def slow_mode(shoot: ShootingResult, sphere) -> tuple[float, np.ndarray]:
    """Slowest perturbation e^{(m+mu) t} psi of e^{mt} phi_p that is small at the origin.

    Returns ``(mu, psi)`` with psi sampled on ``sphere`` and scaled so that
    psi(0) = phi_p(0).  mu < 0 and |mu| is small near the critical exponent.
    """
    params = shoot.params
    N, p, m = params.N, params.p, params.m
    ph = shoot.phi(sphere.alpha)
    M = laplace_beltrami_matrix(sphere)[:-1, :-1].toarray()
    M += np.diag(params.lambda_p + p * ph[:-1] ** (p - 1))
    ev, vec = np.linalg.eig(M)
    k = int(np.argmax(ev.real))
    roots = np.roots([1.0, 2 * m - N + 2, float(ev[k].real)]).real
    psi = np.zeros(sphere.n)
    psi[:-1] = vec[:, k].real / vec[0, k].real * ph[0]
    return float(np.max(roots)), psi


def _cutoff_part(T, A, shoot: ShootingResult) -> np.ndarray:
    N, p, m = shoot.params.N, shoot.params.p, shoot.params.m
    ph = shoot.phi(A)
    one = 1.0 - chi(T)
    with np.errstate(over="ignore", invalid="ignore"):
        out = -np.exp(m * T) * (
            (chi(T, 2) + (2 * m - N + 2) * chi(T, 1)) * ph + (one - one**p) * np.abs(ph) ** p
        )
    # the bracket vanishes identically outside the cutoff layer
    return np.where(np.abs(T + 0.5 * math.log(2.0)) <= math.log(2.0), out, 0.0)


def residual_rhs(v, T, A, shoot: ShootingResult) -> np.ndarray:
    """R(v) in physical values, using the cutoff rearrangement.

    |x|^2 (Delta((1-chi)u0) + ((1-chi)u0)^p)
        = -e^{mt}[(chi'' + (2m-N+2) chi') phi_p + (1-chi-(1-chi)^p) phi_p^p]
    plus the coupling e^{-2t}(|w+v|^p - w^p) with w = (1-chi) u0.
    """
    p, m = shoot.params.p, shoot.params.m
    w = (1.0 - chi(T)) * np.exp(m * T) * shoot.phi(A)
    diff = np.abs(w + v) ** p - np.abs(w) ** p
    with np.errstate(over="ignore", invalid="ignore"):
        coupling = np.where(diff == 0, 0.0, np.exp(-2.0 * T) * diff)
    return _cutoff_part(T, A, shoot) + coupling


def _rhs_rep(W, T, A, shoot: ShootingResult, s) -> np.ndarray:
    """e^{-s} R(e^{s} W), evaluated without forming e^{s} W in the far field."""
    p, m = shoot.params.p, shoot.params.m
    S = s[:, None] * np.ones_like(T)
    w = (1.0 - chi(T)) * np.exp(m * T - S) * shoot.phi(A)
    return _cutoff_part(T, A, shoot) * np.exp(-S) + np.exp(-2.0 * T + (p - 1) * S) * (
        np.abs(w + W) ** p - np.abs(w) ** p
    )


def _u0_grid(grid: EFGrid, shoot: ShootingResult):
    """(1-chi) e^{mt} phi_p in grid representation."""
    m = shoot.params.m
    T, A = grid.mesh()
    return (1.0 - chi(T)) * np.exp(m * T - grid.s()[:, None]) * shoot.phi(A)


def _split_norm(dec: FluxDecomposition, delta, delta_prime) -> float:
    return abs(dec.a_fit) + weighted_norm(dec.u_tilde, delta, delta_prime)


@dataclass
class ConnectionCell:
    params: ExponentParams
    delta: float
    delta_prime: float
    shoot: ShootingResult
    grid: EFGrid
    v: np.ndarray
    a_p: float
    a_p_fit: float
    a_p_literal: float
    lipschitz: float
    iterations: int
    slow_coefficient: float
    slow_exponent: float
    ball_radius: float
    v_norm: float
    rhs0_norm: float
    c0: float
    inner_slope: float
    outer_slope: float
    inner_ratio: float
    history: list = field(default_factory=list)
    widening_log: list = field(default_factory=list)
    _spline: RectBivariateSpline | None = field(default=None, repr=False)

    @property
    def u_grid(self) -> np.ndarray:
        """u in grid representation (multiply by e^{s(t)} for physical values)."""
        return _u0_grid(self.grid, self.shoot) + self.v

    def u(self, t, alpha):
        """Evaluate u in Emden-Fowler variables (t inside the grid)."""
        if self._spline is None:
            self._spline = RectBivariateSpline(self.grid.t, self.grid.alpha, self.v, kx=3, ky=3)
        t = np.asarray(t, float)
        alpha = np.clip(np.asarray(alpha, float), 0.0, 0.5 * math.pi)
        t, alpha = np.broadcast_arrays(t, alpha)
        m = self.params.m
        w = (1.0 - chi(t)) * np.exp(m * t) * self.shoot.phi(alpha)
        return w + self._spline.ev(t, alpha) * np.exp(self.grid.s(t))

    def u_cartesian(self, x):
        x = np.asarray(x, float)
        r = np.linalg.norm(x, axis=-1)
        a = np.arccos(np.clip(x[..., -1] / r, -1.0, 1.0))
        return self.u(-np.log(r), a)

    def scaled(self, lam: float):
        return scaled_family(self, lam)


def _slope(t, logvals, sel):
    return float(np.polyfit(-t[sel], logvals[sel], 1)[0])


def _picard(solver: EFSolver, shoot, v, inner, delta, delta_prime, tol, max_iter):
    grid = solver.grid
    T, A = grid.mesh()
    s = grid.s()
    history, ratios = [], []
    prev = None
    for k in range(1, max_iter + 1):
        v_new = solver.solve(-_rhs_rep(v, T, A, shoot, s), inner)
        d = v_new - v
        dn = _split_norm(decompose(grid, np.zeros_like(d), d, delta, delta_prime), delta, delta_prime)
        history.append(dn)
        if prev is not None and prev > 100 * tol:
            ratios.append(dn / prev)
        prev = dn
        v = v_new
        if not np.isfinite(dn) or (len(ratios) >= 3 and min(ratios[-3:]) >= 1.0):
            raise ContractionError(
                f"Picard iteration does not contract at p = {shoot.params.p:g}"
            )
        if dn <= tol:
            return v, k, history, ratios
    raise ContractionError(f"no convergence in {max_iter} iterations (last step {dn:.2e})")


def _newton(solver: EFSolver, shoot, W, inner, tol, max_iter=60):
    """Solve A W + R(W) = 0 (grid representation) by damped Newton.

    Each t-row of the residual is measured relative to the size of the
    solution on that row and its neighbours, times 1/h^2: u0 grows by many
    orders of magnitude towards the origin, so a global relative test would
    leave the far field unsolved.
    """
    grid = solver.grid
    T, A = grid.mesh()
    s = grid.s()
    p, m = shoot.params.p, shoot.params.m
    S = s[:, None] * np.ones_like(T)
    coef = np.exp(-2.0 * T + (p - 1) * S)[1:-1, :-1].ravel()
    w = ((1.0 - chi(T)) * np.exp(m * T - S) * shoot.phi(A))[1:-1, :-1].ravel()
    Aop = solver.A
    bvec = solver.boundary_vector(inner)
    shape = (grid.nt - 2, grid.n_alpha - 1)
    full = np.zeros_like(T)
    if inner is not None:
        full[-1] = inner

    def resid(x):
        full[1:-1, :-1] = x.reshape(shape)
        return Aop @ x + bvec + _rhs_rep(full, T, A, shoot, s)[1:-1, :-1].ravel()

    def size(x):
        full[1:-1, :-1] = x.reshape(shape)
        mag = np.max(np.abs(full) + np.abs(_u0_grid(grid, shoot)), axis=1)
        mag = np.maximum(np.maximum(mag[:-2], mag[1:-1]), mag[2:])
        mag = np.maximum(mag, 1e-300)
        return np.repeat(mag / grid.h**2, shape[1])

    x = W[1:-1, :-1].ravel().copy()
    R = resid(x)
    scale = size(x)
    history = []
    for k in range(1, max_iter + 1):
        rn = float(np.max(np.abs(R) / scale))
        history.append(rn)
        if rn <= tol:
            break
        d = p * coef * np.abs(w + x) ** (p - 1) * np.sign(w + x)
        dx = splu((Aop + sp.diags(d)).tocsc()).solve(R)
        step = 1.0
        while True:
            y = x - step * dx
            Ry = resid(y)
            if np.max(np.abs(Ry) / scale) < (1 - 1e-4 * step) * rn or step < 1e-3:
                break
            step *= 0.5
        x, R = y, Ry
        scale = size(x)
    else:
        raise ContractionError(f"Newton solve of the connection cell stalled at {history[-1]:.2e}")
    full[1:-1, :-1] = x.reshape(shape)
    return full.copy(), k, history


def picard_lipschitz(solver: EFSolver, shoot, W, delta, delta_prime, n_power=8, seed=0) -> float:
    """Power-iteration estimate of the Lipschitz constant of W -> -G(R(W)) at W.

    Measured in the |a| + L^inf_{delta,delta'} norm with finite-difference
    directional derivatives.
    """
    grid = solver.grid
    T, A = grid.mesh()
    s = grid.s()
    rng = np.random.default_rng(seed)
    d = np.zeros_like(T)
    d[1:-1, :-1] = rng.standard_normal((grid.nt - 2, grid.n_alpha - 1))
    d = solver.solve(d)
    base = -solver.solve(_rhs_rep(W, T, A, shoot, s))

    def norm(x):
        return _split_norm(decompose(grid, np.zeros_like(x), x, delta, delta_prime),
                           delta, delta_prime)

    ratio = 0.0
    for _ in range(n_power):
        eps = 1e-6 * norm(W)
        d = d * (eps / norm(d))
        img = -solver.solve(_rhs_rep(W + d, T, A, shoot, s)) - base
        ratio = norm(img) / eps
        d = img
    return float(ratio)


def _extend(v_old, grid_old: EFGrid, grid: EFGrid):
    """Warm start on a grid with the same step and a farther outer end.

    In grid representation the far field is nearly constant in t, so the
    new region is filled with the old outermost interior row.
    """
    v = np.zeros((grid.nt, grid.n_alpha))
    off = grid.nt - grid_old.nt
    v[off:] = v_old
    v[1:off + 1] = v_old[1]
    return v


def solve_connection(params: ExponentParams, delta: float | None = None, delta_prime: float | None = None,
                     slow_coefficient: float = -0.5, method: str = "newton",
                     h_t: float = 0.05, n_alpha: int = 41, inner_extent: float = 64.0,
                     L_out: float = 24.0, L_out_max: float = 800.0, a_tol: float = 2e-3,
                     tol: float = 1e-11, max_iter: int = 200,
                     inner_window=(24.0, 48.0)) -> ConnectionCell:
    """Connection cell u = (1-chi) u0 + v.

    The annulus e^{-inner_extent} < r < e^{L_out} carries Dirichlet data
    v = c e^{(m+mu) t} psi at the inner end (c = ``slow_coefficient``; zero
    gives the plain fixed point) and v = 0 at the outer end.  The outer end
    is doubled until a_p changes by less than ``a_tol`` relative: the
    coupling term decays only like r^{p(1-N)+2}, so near the critical
    exponent the flux integral converges slowly in r.

    ``method="picard"`` iterates v <- -G(R(v)) and raises ContractionError
    when it does not contract; ``"newton"`` solves the same discrete
    equation and records the Lipschitz ratio of the Picard map.

    A nonzero slow mode decays like r^{-m+s} at the origin, so it lies in
    the inner weighted space only for delta <= -m + s; the default delta
    is the midpoint of (-m, -m + s].
    """
    N, p, m = params.N, params.p, params.m
    if delta_prime is None:
        delta_prime = default_delta_prime(params)
    shoot = solve_phip(params)
    mu, _ = slow_mode(shoot, EFGrid(N, -1.0, 1.0, h_t, n_alpha).sphere)
    if delta is None:
        delta = -m - 0.5 * mu if slow_coefficient != 0 else 0.5 * (-m + 1)
    check_windows(params, delta, delta_prime)
    if slow_coefficient != 0 and delta > -m - mu:
        raise ConfigError(f"δ must not exceed −2/(p−1)+s = {-m - mu:.6g} when the slow mode "
                          f"is present, got {delta:g}")
    if method not in ("newton", "picard"):
        raise ConfigError(f"method must be 'newton' or 'picard', got {method!r}")
    if slow_coefficient > 0:
        raise ConfigError(f"slow-mode coefficient must be ≤ 0, got {slow_coefficient:g}")
    if not inner_window[1] < inner_extent:
        raise ConfigError("inner slope window must end before the inner extent")

    # size of the data and of the first iterate on the probe-stabilised annulus
    solver0, F0, w0, _, _ = widen(lambda T, A: residual_rhs(0.0, T, A, shoot), N, h_t, n_alpha,
                                  scaled=True)
    rhs0_norm = WeightedField(solver0.grid, F0, delta, delta_prime).norm()
    ball = 2.0 * _split_norm(decompose(solver0.grid, -F0, -w0, delta, delta_prime),
                             delta, delta_prime)
    c2 = shoot.c2_surrogate()

    grid = EFGrid(N, -L_out, inner_extent, h_t, n_alpha, scaled=True)
    mu, psi = slow_mode(shoot, grid.sphere)
    t_hi = grid.t_hi
    inner = None
    if slow_coefficient != 0:
        inner = slow_coefficient * psi * math.exp((m + mu) * t_hi - float(grid.s(np.array([t_hi]))[0]))
    solver = EFSolver(grid)
    v = np.zeros((grid.nt, grid.n_alpha))
    a_prev, log, ratios = None, [], []
    while True:
        if method == "picard":
            v, k, history, ratios = _picard(solver, shoot, v, inner, delta, delta_prime, tol,
                                            max_iter)
        else:
            v, k, history = _newton(solver, shoot, v, inner, tol)
        T, A = grid.mesh()
        F = _rhs_rep(v, T, A, shoot, grid.s())
        a_p, a_lit = flux_estimates(grid, -F)
        log.append((-grid.t_lo, a_p))
        if a_prev is not None and abs(a_p - a_prev) <= a_tol * abs(a_p):
            break
        if -2 * grid.t_lo > L_out_max:
            raise TruncationError(f"a_p did not stabilise up to r = e^{-grid.t_lo:g}: {log}")
        a_prev = a_p
        new = EFGrid(N, 2 * grid.t_lo, t_hi, h_t, n_alpha, scaled=True)
        v = _extend(v, grid, new)
        grid = new
        solver = EFSolver(grid)

    if method == "picard":
        lip = float(np.max(ratios)) if ratios else 0.0
    else:
        lip = picard_lipschitz(solver, shoot, v, delta, delta_prime)

    t_lo = grid.t_lo
    outer_window = (0.9 * t_lo, 0.5 * t_lo)
    kappa = -(p * (1 - N) + 2)
    final = decompose(grid, -F, v, delta, delta_prime, extra_exponents=(kappa,),
                      fit_window=outer_window)
    u = _u0_grid(grid, shoot) + v
    if a_p <= 0:
        raise AssemblyError(f"flux coefficient a_p = {a_p:.3e} is not positive")
    if np.any(u[1:-1, :-1] <= 0):
        raise AssemblyError("connection cell is not positive on the grid")

    t = grid.t[1:-1]
    u = u[1:-1]
    logsup = np.log(np.max(u, axis=1)) + grid.s(t)
    inner_sel = (t >= inner_window[0]) & (t <= inner_window[1])
    outer_sel = (t >= outer_window[0]) & (t <= outer_window[1])
    # |v| / u0 over the innermost decade
    tg = grid.t
    deep = tg >= t_hi - math.log(10.0)
    u0 = np.exp(m * tg[deep] - grid.s(tg[deep]))[:, None] * shoot.phi(grid.alpha)[None, :]
    inner_ratio = float(np.max(np.abs(v[deep, :-1]) / u0[:, :-1]))
    return ConnectionCell(
        params=params, delta=delta, delta_prime=delta_prime, shoot=shoot, grid=grid, v=v,
        a_p=a_p, a_p_fit=final.a_fit, a_p_literal=a_lit, lipschitz=lip, iterations=k,
        slow_coefficient=slow_coefficient, slow_exponent=-mu,
        ball_radius=ball, v_norm=_split_norm(final, delta, delta_prime), rhs0_norm=rhs0_norm,
        c0=rhs0_norm / c2, inner_slope=_slope(t, logsup, inner_sel),
        outer_slope=_slope(t, np.log(u[:, 0]) + grid.s(t), outer_sel), inner_ratio=inner_ratio,
        history=history, widening_log=log,
    )


def scaled_family(cell: ConnectionCell, lam: float):
    """Evaluator for u_lam(x) = lam^{2/(p-1)} u_1(lam x) in (t, alpha)."""
    if not lam > 0:
        raise ConfigError(f"scaling must satisfy λ > 0, got {lam}")
    m = cell.params.m
    shift = math.log(lam)

    def u_lam(t, alpha):
        return lam**m * cell.u(np.asarray(t, float) - shift, alpha)

    return u_lam


def residual_certificate(cell: ConnectionCell, points, h: float | None = None) -> float:
    """max |Delta u + u^p| / u^p at Cartesian points by central differences.

    Inside the cutoff annulus 1 < r < 2 the spline of v smears the steep
    cutoff source over one grid cell, so the value there measures the
    t-resolution rather than the discrete equation.
    """
    pts = np.asarray(points, float)
    N = cell.params.N
    h = cell.grid.h_t * 0.5 if h is None else h
    f0 = cell.u_cartesian(pts)
    lap = np.zeros(len(pts))
    for i in range(N):
        e = np.zeros(N)
        e[i] = h
        lap += cell.u_cartesian(pts + e) - 2 * f0 + cell.u_cartesian(pts - e)
    lap /= h * h
    return float(np.max(np.abs(lap + np.abs(f0) ** cell.params.p) / np.abs(f0) ** cell.params.p))
