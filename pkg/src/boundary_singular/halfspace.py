"""Weighted right inverse for |x|^2 Delta u = f on the punctured half-space.

Everything is axisymmetric and posed in Emden-Fowler variables
t = -log|x|, where the equation reads

    w_tt - (N-2) w_t + Delta_S w = f,

with w = 0 on the equator alpha = pi/2.  The weights are
r^{-delta} = e^{delta t} near the origin (t >= 0) and e^{delta' t} near
infinity (t <= 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline
from scipy.sparse.linalg import splu

from .errors import PreconditionError, TruncationError
from .sphere import AxisymGrid, SphericalProfile, dirichlet_solve, laplace_beltrami_matrix

LOG2 = math.log(2.0)


# -- cutoff ---------------------------------------------------------------

def _smoothstep(s):
    s = np.clip(s, 0.0, 1.0)
    return s**3 * (10 - 15 * s + 6 * s**2)


def _smoothstep_d(s, k):
    inside = (s > 0) & (s < 1)
    s = np.clip(s, 0.0, 1.0)
    if k == 1:
        d = 30 * s**2 * (1 - s) ** 2
    else:
        d = 60 * s * (1 - s) * (1 - 2 * s)
    return np.where(inside, d, 0.0)


def chi(t, nu: int = 0):
    """Cutoff chi (0 on B_1, 1 outside B_2) and its t-derivatives.

    chi is a quintic smoothstep in log r over [0, log 2].
    """
    s = -np.asarray(t, dtype=float) / LOG2
    if nu == 0:
        return _smoothstep(s)
    return _smoothstep_d(s, nu) * (-1.0 / LOG2) ** nu


def u_infinity(t, alpha, N):
    """|x|^{-N} x_N in Emden-Fowler variables."""
    return np.exp((N - 1) * np.asarray(t)) * np.cos(alpha)


# -- barrier ----------------------------------------------------------------

def _check_delta(delta, N):
    if not (1 - N < delta < 1):
        raise PreconditionError(f"delta must lie in (1-N, 1) = ({1 - N}, 1), got {delta}")


def barrier_phistar(delta: float, N: int, n_alpha: int = 401) -> SphericalProfile:
    """Positive solution of -(Delta_S + delta(delta+N-2)) phi = 1, phi(pi/2) = 0."""
    _check_delta(delta, N)
    grid = AxisymGrid(N, n_alpha)
    vals = dirichlet_solve(grid, delta * (delta + N - 2), -np.ones(n_alpha))
    if np.any(vals[:-1] <= 0):
        raise PreconditionError("barrier is not positive")
    return SphericalProfile(grid, vals)


def phistar_exact_n2(delta: float, alpha):
    """Closed form of the barrier for N = 2."""
    alpha = np.asarray(alpha, dtype=float)
    k2 = delta * delta
    if k2 < 1e-14:
        return 0.5 * (0.25 * math.pi**2 - alpha**2)
    k = abs(delta)
    return (np.cos(k * alpha) / math.cos(0.5 * k * math.pi) - 1.0) / k2


def _profile_spline(prof: SphericalProfile) -> CubicSpline:
    return CubicSpline(prof.grid.alpha, prof.values, bc_type=((1, 0.0), "not-a-knot"))


def barrier_identity_residual(delta: float, N: int, n_alpha: int, points, h: float | None = None):
    """Cartesian FD check of -|x|^2 Delta(|x|^delta phi_*) = c |x|^delta.

    Returns ``(max |residual| / |x|^delta, measured c)`` at the given points
    (shape (M, N), upper half-space).  The FD step defaults to the angular
    grid spacing so that both errors shrink together.
    """
    prof = barrier_phistar(delta, N, n_alpha)
    spl = _profile_spline(prof)
    h = prof.grid.h if h is None else h
    pts = np.asarray(points, dtype=float)

    def fn(x):
        r = np.linalg.norm(x, axis=-1)
        a = np.arccos(np.clip(x[..., -1] / r, -1, 1))
        return r**delta * spl(a)

    lap = np.zeros(len(pts))
    f0 = fn(pts)
    for i in range(N):
        e = np.zeros(N)
        e[i] = h
        lap += fn(pts + e) - 2 * f0 + fn(pts - e)
    lap /= h * h
    r = np.linalg.norm(pts, axis=-1)
    c = -(r**2) * lap / r**delta
    return float(np.max(np.abs(c - 1.0))), float(np.median(c))


# -- fields and norms ---------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EFGrid:
    """Uniform (t, alpha) grid on [t_lo, t_hi] x [0, pi/2].

    With ``scaled=True`` grid values W represent u = e^{s(t)} W where
    s(t) = (N-1)(t - log(1+e^t)), i.e. s ~ (N-1)t at infinity and s ~ 0 near
    the origin.  This keeps the r^{1-N} far field O(1) in floating point.
    """

    N: int
    t_lo: float
    t_hi: float
    h_t: float
    n_alpha: int
    scaled: bool = False
    t: np.ndarray = field(init=False, repr=False)
    sphere: AxisymGrid = field(init=False, repr=False)

    def __post_init__(self):
        if not (self.t_lo < 0 < self.t_hi):
            raise PreconditionError("grid must cover r = 1 (t_lo < 0 < t_hi)")
        nt = int(round((self.t_hi - self.t_lo) / self.h_t)) + 1
        object.__setattr__(self, "t", np.linspace(self.t_lo, self.t_hi, nt))
        object.__setattr__(self, "sphere", AxisymGrid(self.N, self.n_alpha))

    @property
    def nt(self) -> int:
        return self.t.size

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def alpha(self) -> np.ndarray:
        return self.sphere.alpha

    @property
    def sigma(self) -> float:
        """Far-field growth rate absorbed by the scaling."""
        return float(self.N - 1) if self.scaled else 0.0

    def s(self, t=None, nu: int = 0):
        """Log-scaling s(t) and its derivatives (zero when unscaled)."""
        t = self.t if t is None else np.asarray(t, dtype=float)
        if not self.scaled:
            return np.zeros_like(t)
        c = self.N - 1
        sig = 0.5 * (1.0 + np.tanh(0.5 * t))
        if nu == 0:
            return c * (t - np.logaddexp(0.0, t))
        if nu == 1:
            return c * (1.0 - sig)
        return -c * sig * (1.0 - sig)

    def mesh(self):
        return np.meshgrid(self.t, self.alpha, indexing="ij")

    def sample(self, fn: Callable) -> np.ndarray:
        """Values of fn(t, alpha) in the grid representation."""
        T, A = self.mesh()
        return np.asarray(fn(T, A), dtype=float) * np.exp(-self.s())[:, None]

    def physical(self, values: np.ndarray) -> np.ndarray:
        return values * np.exp(self.s())[:, None]


@dataclass
class WeightedField:
    """Field on an EFGrid, stored in the grid representation."""

    grid: EFGrid
    values: np.ndarray
    delta: float
    delta_prime: float

    def norm(self) -> float:
        return weighted_norm(self, self.delta, self.delta_prime)

    def physical(self) -> np.ndarray:
        return self.grid.physical(self.values)

    def __call__(self, t, alpha):
        """Cubic interpolation in (t, alpha); zero outside the grid."""
        from scipy.interpolate import RegularGridInterpolator

        it = RegularGridInterpolator((self.grid.t, self.grid.alpha), self.values,
                                     method="cubic", bounds_error=False, fill_value=0.0)
        t, alpha = np.broadcast_arrays(np.asarray(t, float), np.asarray(alpha, float))
        return it(np.stack([t, alpha], axis=-1)) * np.exp(self.grid.s(t))


def weighted_norm(u: WeightedField, delta: float, delta_prime: float) -> float:
    """max(sup_{r<=1} r^{-delta}|u|, sup_{r>=1} r^{-delta'}|u|)."""
    g = u.grid
    t = g.t
    v = np.abs(u.values)
    inner = t >= 0
    outer = t <= 0
    s = g.s()
    a = np.max(np.exp(delta * t + s)[inner, None] * v[inner]) if inner.any() else 0.0
    b = np.max(np.exp(delta_prime * t + s)[outer, None] * v[outer]) if outer.any() else 0.0
    return float(max(a, b))


# -- linear solver ------------------------------------------------------------

class EFSolver:
    """Factored Dirichlet problem for w_tt - (N-2) w_t + Delta_S w on a grid.

    On a scaled grid the conjugated operator acting on W = e^{-s} w is used:
    W_tt + (2s' - (N-2)) W_t + (s'' + s'^2 - (N-2) s') W + Delta_S W.
    """

    def __init__(self, grid: EFGrid):
        self.grid = grid
        N, h = grid.N, grid.h
        t = grid.t[1:-1]
        s1, s2 = grid.s(t, 1), grid.s(t, 2)
        a1 = 2 * s1 - (N - 2)
        a0 = s2 + s1**2 - (N - 2) * s1
        lo = 1 / h**2 - a1[1:] / (2 * h)
        hi = 1 / h**2 + a1[:-1] / (2 * h)
        # coupling of the last interior row to the inner boundary t_hi
        self._inner_coef = 1 / h**2 + a1[-1] / (2 * h)
        D = sp.diags([lo, a0 - 2 / h**2, hi], [-1, 0, 1])
        n, nb = t.size, grid.n_alpha - 1
        B = laplace_beltrami_matrix(grid.sphere)[:-1, :-1]
        A = sp.kron(D, sp.identity(nb)) + sp.kron(sp.identity(n), B)
        self.A = A.tocsc()
        self._lu = splu(self.A)

    def boundary_vector(self, inner) -> np.ndarray:
        """Contribution of Dirichlet data at t_hi to the interior equations."""
        g = self.grid
        b = np.zeros((g.nt - 2, g.n_alpha - 1))
        if inner is not None:
            b[-1] = self._inner_coef * np.asarray(inner)[:-1]
        return b.ravel()

    def solve(self, F: np.ndarray, inner=None) -> np.ndarray:
        """Solution in grid representation for data F in grid representation.

        ``inner`` optionally prescribes the values at t_hi (zero otherwise).
        """
        g = self.grid
        w = np.zeros((g.nt, g.n_alpha))
        rhs = np.ascontiguousarray(F[1:-1, :-1]).ravel() - self.boundary_vector(inner)
        w[1:-1, :-1] = self._lu.solve(rhs).reshape(g.nt - 2, -1)
        if inner is not None:
            w[-1] = inner
        return w


def mode_amplitude(grid: EFGrid, values: np.ndarray) -> np.ndarray:
    """Coefficient of cos(alpha) in the L2(S_+) sense, per t row."""
    c = grid.sphere.cos
    return grid.sphere.quad(values * c) / grid.sphere.quad(c * c)


def discrete_harmonic(grid: EFGrid):
    """Discrete counterpart of r^{1-N} cos(alpha) and its Dirichlet image.

    Returns ``(mu_plus, mu_minus, psi)``: the two t-growth rates, in grid
    representation, of the far-field operator on its first angular
    eigenvector ``psi`` (scaled to 1 at the pole).  Unscaled they equal N-1
    and -1 up to O(h^2); scaled they are shifted by -(N-1).
    """
    N, h, sg = grid.N, grid.h, grid.sigma
    B = laplace_beltrami_matrix(grid.sphere)[:-1, :-1].toarray()
    ev, vec = np.linalg.eig(B)
    k = int(np.argmin(np.abs(ev + (N - 1))))
    lam = float(ev[k].real)
    psi = np.zeros(grid.n_alpha)
    psi[:-1] = vec[:, k].real / vec[0, k].real
    a1 = 2 * sg - (N - 2)
    a0 = sg * sg - (N - 2) * sg
    hi = 1 / h**2 + a1 / (2 * h)
    lo = 1 / h**2 - a1 / (2 * h)
    z = np.roots([hi, a0 + lam - 2 / h**2, lo]).real
    mu = np.sort(np.log(z) / h)
    return float(mu[1]), float(mu[0]), psi


def truncated_harmonic(grid: EFGrid, t):
    """t-profile (grid representation) of the discrete harmonic vanishing at t_lo."""
    mp, mm, _ = discrete_harmonic(grid)
    t = np.asarray(t, dtype=float)
    pre = grid.sigma * t - grid.s(t)
    return np.exp(pre + mp * t) - np.exp(pre + (mp - mm) * grid.t_lo + mm * t)


def flux_estimates(grid: EFGrid, F: np.ndarray) -> tuple[float, float]:
    """Return ``(a, a_literal)`` for data F (grid representation).

    ``a`` comes from the x_N-moment identity
    a N int theta_N^2 = -int f x_N |x|^{-2} dx, which accounts for the
    flux through the flat boundary.  ``a_literal`` evaluates
    a (N-1) int theta_N = -int f |x|^{-2} dx.
    """
    N, S, t = grid.N, grid.sphere, grid.t
    c = S.cos
    s = grid.s()
    moment = np.trapezoid(S.quad(F * c) * np.exp(s - (N - 1) * t), t)
    a = -moment / (N * S.quad(c * c))
    mass = np.trapezoid(S.quad(F) * np.exp(s - (N - 2) * t), t)
    a_lit = -mass / ((N - 1) * S.quad(c))
    return float(a), float(a_lit)


def far_field_fit(grid: EFGrid, u: np.ndarray, window: tuple[float, float],
                  extra_exponents=()) -> float:
    """Least-squares coefficient of r^{1-N} cos(alpha) in u over a t-window.

    The harmonic basis includes the image term forced by the Dirichlet
    condition at t_lo; ``extra_exponents`` k add e^{k t} terms for slowly
    decaying remainders.
    """
    t = grid.t
    sel = (t >= window[0]) & (t <= window[1])
    _, _, psi = discrete_harmonic(grid)
    c = grid.sphere.cos
    A = (grid.sphere.quad(u * c) / grid.sphere.quad(psi * c))[sel]
    ts = t[sel]
    cols = [truncated_harmonic(grid, ts)] + [np.exp(k * ts - grid.s(ts)) for k in extra_exponents]
    M = np.stack(cols, axis=1)
    scale = np.max(np.abs(M), axis=0)
    coef, *_ = np.linalg.lstsq(M / scale, A, rcond=None)
    return float(coef[0] / scale[0])


@dataclass
class FluxDecomposition:
    u: WeightedField
    u_tilde: WeightedField
    a: float
    a_literal: float
    a_fit: float
    widenings: int
    probe_change: float
    outer_slope: float | None = None

    def u_infty(self, t, alpha):
        return u_infinity(t, alpha, self.u.grid.N)


_PROBES_T = (-1.0, 0.0, 1.0)
_PROBES_A = (0.0, math.pi / 4)


def _probe(grid, w):
    out = []
    for t0 in _PROBES_T:
        j = int(np.argmin(np.abs(grid.t - t0)))
        for a0 in _PROBES_A:
            i = int(np.argmin(np.abs(grid.alpha - a0)))
            out.append(w[j, i] * math.exp(grid.s(grid.t[j])))
    return np.array(out)


def _check_windows(N, delta, delta_prime):
    _check_delta(delta, N)
    if not (-N < delta_prime < 1 - N):
        raise PreconditionError(
            f"delta' must lie in (-N, 1-N) = ({-N}, {1 - N}), got {delta_prime}"
        )


def weighted_poisson_solve(f, N: int, delta: float, delta_prime: float, h_t: float = 0.05,
                           n_alpha: int = 41, L0: float = 12.0, L_max: float = 128.0,
                           tol: float = 1e-6, fit_window=None, extra_exponents=(),
                           scaled: bool = False) -> FluxDecomposition:
    """Solve |x|^2 Delta u = f in R^N_+, u = 0 on the flat boundary.

    ``f`` is a callable f(t, alpha).  The annulus e^{-L} < r < e^{L} is
    widened (L doubles) until probe values near r = 1 change by less than
    ``tol`` relative to their size.
    """
    _check_windows(N, delta, delta_prime)
    solver, F, w, k, change = widen(f, N, h_t, n_alpha, L0, L_max, tol, scaled)
    return decompose(solver.grid, F, w, delta, delta_prime, k, change, fit_window, extra_exponents)


def widen(f, N, h_t=0.05, n_alpha=41, L0=12.0, L_max=128.0, tol=1e-6, scaled=False):
    """Double the annulus until probe values stabilise.

    Returns ``(solver, F, w, widenings, last_change)`` on the accepted grid,
    with F and w in grid representation.
    """
    prev, L, k = None, L0, 0
    while True:
        grid = EFGrid(N, -L, L, h_t, n_alpha, scaled)
        F = grid.sample(f)
        solver = EFSolver(grid)
        w = solver.solve(F)
        probe = _probe(grid, w)
        if prev is not None:
            change = float(np.max(np.abs(probe - prev)) / max(1.0, np.max(np.abs(probe))))
            if change < tol:
                break
        else:
            change = math.inf
        prev = probe
        k += 1
        if 2 * L > L_max:
            raise TruncationError(f"widening did not stabilise up to L = {L} (change {change:.2e})")
        L *= 2
    return solver, F, w, k, change


def decompose(grid, F, w, delta, delta_prime, widenings=0, change=0.0, fit_window=None,
              extra_exponents=()) -> FluxDecomposition:
    """Split a solution w of the grid problem with data F into u_tilde + a chi u_inf."""
    a, a_lit = flux_estimates(grid, F)
    if fit_window is None:
        fit_window = (grid.t_lo + 4.0, min(-4.0, 0.5 * grid.t_lo))
    # the fitted coefficient is the one carried by the discrete solution;
    # it differs from the quadrature flux by O(h^2)
    a_fit = far_field_fit(grid, w, fit_window, extra_exponents)
    # subtract the discrete harmonic (with its Dirichlet image at t_lo) so
    # that u_tilde carries no O(h^2) leftover of the r^{1-N} mode
    _, _, psi = discrete_harmonic(grid)
    T, _ = grid.mesh()
    ut = w - a_fit * chi(T) * truncated_harmonic(grid, T) * psi
    u = WeightedField(grid, w, delta, delta_prime)
    u_tilde = WeightedField(grid, ut, delta, delta_prime)
    return FluxDecomposition(u, u_tilde, a, a_lit, a_fit, widenings, change,
                             _outer_slope(grid, ut, fit_window))


def _outer_slope(grid, ut, window):
    """Fitted log-log slope of sup_alpha |u_tilde| against r over the window."""
    t = grid.t
    sel = (t >= window[0]) & (t <= window[1])
    m = np.max(np.abs(ut[sel]), axis=1)
    # below round-off the decay is faster than anything measurable
    if np.any(m <= 1e-12 * np.max(np.abs(ut))):
        return None
    return float(np.polyfit(-t[sel], np.log(m) + grid.s(t[sel]), 1)[0])


# -- manufactured solutions -------------------------------------------------

@dataclass
class HalfspaceStudy:
    delta: float
    steps: list
    errors: np.ndarray  # max error over |t| <= 2
    orders: np.ndarray


def manufactured_halfspace(delta: float, t_on: float = -3.0):
    """Exact pair (u, f) with |x|^2 Delta u = f for N = 2.

    u = eta(t) e^{-delta t} phi_*(alpha), eta a quintic step switching on over
    [t_on, t_on + 1], so u vanishes near infinity and behaves like
    r^delta near the origin.
    """
    def g(t, k=0):
        s = t - t_on
        eta = [_smoothstep(s), _smoothstep_d(s, 1), _smoothstep_d(s, 2)]
        e = np.exp(-delta * t)
        if k == 0:
            return e * eta[0]
        if k == 1:
            return e * (eta[1] - delta * eta[0])
        return e * (eta[2] - 2 * delta * eta[1] + delta**2 * eta[0])

    def u(t, alpha):
        return g(t) * phistar_exact_n2(delta, alpha)

    def f(t, alpha):
        ph = phistar_exact_n2(delta, alpha)
        return g(t, 2) * ph + g(t) * (-1.0 - delta**2 * ph)

    return u, f


def manufactured_study(delta: float, steps=((0.1, 21), (0.05, 41), (0.025, 81)),
                       delta_prime: float = -1.5) -> HalfspaceStudy:
    """Max error of weighted_poisson_solve on |t| <= 2 under joint (t, alpha) refinement."""
    u, f = manufactured_halfspace(delta)
    errs = []
    for h_t, n_alpha in steps:
        dec = weighted_poisson_solve(f, 2, delta, delta_prime, h_t=h_t, n_alpha=n_alpha)
        grid = dec.u.grid
        T, A = grid.mesh()
        sel = np.abs(grid.t) <= 2.0
        errs.append(float(np.max(np.abs(dec.u.physical() - u(T, A))[sel])))
    errs = np.array(errs)
    hs = np.array([s[0] for s in steps])
    orders = np.log(errs[:-1] / errs[1:]) / np.log(hs[:-1] / hs[1:])
    return HalfspaceStudy(delta, [list(s) for s in steps], errs, orders)
