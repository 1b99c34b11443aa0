"""Log-corrected singular cell at the critical exponent p = (N+1)/(N-1).

In Emden-Fowler variables t = -log|x| the cell is

    phi(t, alpha) = a_N t^{-b_N} phi_1 + f_2(t) phi_1 + psi_1(t, alpha),

with psi_1 orthogonal to phi_1 at every t.  The pair (psi_1, f_2) is found
by Picard iteration of M = (T_1 N_1, T_2 N_2) in the norm
``||t^sigma psi||_inf + mu ||t^sigma f||_inf``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import CubicSpline, RectBivariateSpline
from scipy.signal import lfilter
from scipy.sparse.linalg import splu

from .errors import (
    AssemblyError,
    ConfigError,
    ContractionError,
    PreconditionError,
    SingularSystemError,
)
from .sphere import AxisymGrid, constants, laplace_beltrami_matrix, phi1, project_perp

_GL_X, _GL_W = np.polynomial.legendre.leggauss(6)


@dataclass(frozen=True, eq=False)
class CylinderGrid:
    N: int
    t_star: float
    T: float
    nt: int
    n_alpha: int = 41
    t: np.ndarray = field(init=False, repr=False)
    sphere: AxisymGrid = field(init=False, repr=False)

    def __post_init__(self):
        if not self.t_star > 0:
            raise ConfigError("t_* must be positive")
        if self.T < 10 * self.t_star:
            raise ConfigError(f"truncation must satisfy T >= 10 t_* (T={self.T}, t_*={self.t_star})")
        object.__setattr__(self, "t", np.linspace(self.t_star, self.T, self.nt))
        object.__setattr__(self, "sphere", AxisymGrid(self.N, self.n_alpha))

    @classmethod
    def with_step(cls, N, t_star, T=None, h_t=0.1, n_alpha=41):
        T = T if T is not None else max(200.0, 10 * t_star)
        nt = int(round((T - t_star) / h_t)) + 1
        return cls(N, t_star, T, nt, n_alpha)

    @property
    def h(self) -> float:
        return float(self.t[1] - self.t[0])

    @property
    def alpha(self) -> np.ndarray:
        return self.sphere.alpha


@dataclass
class CylinderField:
    grid: CylinderGrid
    values: np.ndarray
    sigma: float = 0.0

    def weighted_norm(self, sigma=None) -> float:
        s = self.sigma if sigma is None else sigma
        return float(np.max(np.abs(self.grid.t[:, None] ** s * self.values)))


@dataclass
class ScalarTrack:
    t: np.ndarray
    values: np.ndarray
    sigma: float = 0.0

    def weighted_norm(self, sigma=None) -> float:
        s = self.sigma if sigma is None else sigma
        return float(np.max(np.abs(self.t**s * self.values)))


def _wnorm(t, v, s):
    v = np.asarray(v)
    w = t**s if v.ndim == 1 else (t**s)[:, None]
    return float(np.max(np.abs(w * v)))


def error_E(t, grid: AxisymGrid) -> np.ndarray:
    """Leading error N a b t^{-b-1} phi_1 - (a t^{-b} phi_1)^{(N+1)/(N-1)}, shape (nt, n)."""
    N = grid.N
    a, b = constants(N, grid)
    q = (N + 1) / (N - 1)
    ph = phi1(grid).values
    t = np.asarray(t, dtype=float)[:, None]
    return N * a * b * t ** (-b - 1) * ph - np.abs(a * t ** (-b) * ph) ** q


def _dtt_matrix(n_int, h, N):
    # (d_tt + N d_t) on interior nodes, zero Dirichlet data at both ends
    main = np.full(n_int, -2.0 / h**2)
    lo = np.full(n_int - 1, 1.0 / h**2 - N / (2 * h))
    hi = np.full(n_int - 1, 1.0 / h**2 + N / (2 * h))
    return sp.diags([lo, main, hi], [-1, 0, 1], format="csr")


class T1Solver:
    """Right inverse of d_tt + N d_t + Delta_S + (N-1) on phi_1-orthogonal data.

    Dirichlet data at t_*, at the truncation T, and at the equator.  The
    orthogonality constraint is imposed exactly through a per-t multiplier,
    so outputs are orthogonal to phi_1 in the discrete inner product.
    """

    def __init__(self, grid: CylinderGrid):
        self.grid = grid
        N, na, nt = grid.N, grid.n_alpha, grid.nt
        ni, nb = nt - 2, na - 1
        self.phi = phi1(grid.sphere)
        ph = self.phi.values[:-1]
        w = grid.sphere.weights[:-1]
        B = laplace_beltrami_matrix(grid.sphere)[:-1, :-1] + (N - 1) * sp.identity(nb)
        A = sp.kron(_dtt_matrix(ni, grid.h, N), sp.identity(nb)) + sp.kron(sp.identity(ni), B)
        P = sp.kron(sp.identity(ni), sp.csr_matrix(ph[:, None]))
        C = sp.kron(sp.identity(ni), sp.csr_matrix((w * ph)[None, :]))
        K = sp.bmat([[A, P], [C, None]], format="csc")
        self.A = A.tocsr()
        try:
            self._lu = splu(K)
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc
        self._ni, self._nb = ni, nb

    def orthogonality(self, h: np.ndarray) -> float:
        return float(np.max(np.abs(self.grid.sphere.quad(h * self.phi.values))))

    def __call__(self, h: np.ndarray, check=True) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        if check:
            scale = max(1.0, float(np.max(np.abs(h))))
            if self.orthogonality(h) > 1e-8 * scale:
                raise PreconditionError(
                    f"right-hand side is not orthogonal to phi_1 (defect {self.orthogonality(h):.3e})"
                )
        ni, nb = self._ni, self._nb
        rhs = np.concatenate([h[1:-1, :-1].ravel(), np.zeros(ni)])
        sol = self._lu.solve(rhs)
        psi = np.zeros_like(h)
        psi[1:-1, :-1] = sol[: ni * nb].reshape(ni, nb)
        return psi

    def apply(self, psi: np.ndarray) -> np.ndarray:
        """Discrete operator on the interior nodes (boundary rows left zero)."""
        out = np.zeros_like(psi)
        out[1:-1, :-1] = (self.A @ psi[1:-1, :-1].ravel()).reshape(self._ni, self._nb)
        return out

    def residual(self, psi, h) -> float:
        """Sup of Pi_perp(L psi - h) over interior nodes."""
        r = project_perp(self.apply(psi) - h, self.phi)
        return float(np.max(np.abs(r[1:-1, :-1])))


def T1_solve(h: CylinderField, sigma: float, solver: T1Solver | None = None):
    """psi = T_1(h) with the measured constant ||t^s psi|| / ||t^s h||."""
    solver = solver or T1Solver(h.grid)
    psi = solver(h.values)
    hn = h.weighted_norm(sigma)
    const = _wnorm(h.grid.t, psi, sigma) / hn if hn > 0 else 0.0
    return CylinderField(h.grid, psi, sigma), const


def _tail_integral(t, g, beta):
    """int_T^inf g for the continuation g(T) (t/T)^{-beta}; linear in g."""
    return g[-1] * t[-1] / (beta - 1.0)


def G_operator(t: np.ndarray, g: np.ndarray, N: int, beta: float = 2.0) -> np.ndarray:
    """Right inverse of d_tt + N d_t on [t_*, inf):

        G(g)(t) = - int_t^inf e^{-N z} int_{t_*}^z e^{N s} g(s) ds dz.

    Inner integrals by Gauss-Legendre on a cubic spline of g (exponential
    integrator recursion), outer integral by cubic Hermite cells, and the
    analytic tail J(T)/N + (1/N) int_T^inf g beyond the last node, with g
    continued as t^{-beta} so that G stays linear.
    """
    t = np.asarray(t, dtype=float)
    g = np.asarray(g, dtype=float)
    h = t[1] - t[0]
    spl = CubicSpline(t, g)
    s = t[:-1, None] + 0.5 * h * (_GL_X[None, :] + 1.0)
    kern = np.exp(-N * (t[1:, None] - s))
    cell = 0.5 * h * np.sum(_GL_W[None, :] * kern * spl(s), axis=1)
    decay = math.exp(-N * h)
    J = np.empty_like(t)
    J[0] = 0.0
    J[1:] = lfilter([1.0], [1.0, -decay], cell)
    dJ = g - N * J
    pieces = 0.5 * h * (J[:-1] + J[1:]) + h**2 / 12.0 * (dJ[:-1] - dJ[1:])
    tail = J[-1] / N + _tail_integral(t, g, beta) / N
    out = np.empty_like(t)
    out[-1] = tail
    out[:-1] = tail + np.cumsum(pieces[::-1])[::-1]
    return -out


@dataclass
class T2Result:
    f: ScalarTrack
    iterations: int
    constant: float


def T2_solve(g: ScalarTrack, sigma: float, N: int, tol=1e-12, max_iter=5000,
             tail_exponent: float | None = None) -> T2Result:
    """f = T_2(g) for (d_tt + N d_t + (N(N-1)/2)/t) f = g.

    Perturbation iteration f <- G(g - (N(N-1)/2) f / t).  Beyond the grid the
    data decay like t^{-tail_exponent} (default 1 + sigma, the slowest decay
    the weighted space allows).
    """
    t = g.t
    if not sigma > (N - 1) / 2:
        raise ConfigError(f"sigma must satisfy sigma > (N-1)/2 = {(N - 1) / 2}")
    if not N * t[0] - 1 - sigma > 0:
        raise ConfigError("t_* must satisfy N t_* - 1 - sigma > 0")
    kappa = N * (N - 1) / 2.0
    gv = np.asarray(g.values, dtype=float)
    beta = 1 + sigma if tail_exponent is None else tail_exponent
    f = G_operator(t, gv, N, beta)
    prev = math.inf
    growth = 0
    it = 0
    for it in range(1, max_iter + 1):
        f_new = G_operator(t, gv - kappa * f / t, N, beta)
        corr = _wnorm(t, f_new - f, sigma)
        f = f_new
        if corr <= tol * max(_wnorm(t, f, sigma), 1e-300):
            break
        growth = growth + 1 if corr > prev else 0
        if growth > 20 or not np.isfinite(corr):
            raise ContractionError("T_2 perturbation iteration diverges; increase t_*")
        prev = corr
    else:
        raise ContractionError("T_2 perturbation iteration did not converge; increase t_*")
    gn = _wnorm(t, gv, 1 + sigma)
    const = _wnorm(t, f, sigma) / gn if gn > 0 else 0.0
    return T2Result(ScalarTrack(t, f, sigma), it, const)


def lemma_bound(N, sigma, t_star) -> float:
    """(1/(N sigma)) (1 - (sigma+1)/(N t_*))^{-1}."""
    return 1.0 / (N * sigma) / (1.0 - (sigma + 1.0) / (N * t_star))


class Nonlinearities:
    """N_1 and N_2 of the (psi_1, f_2) system, transcribed term by term."""

    def __init__(self, grid: CylinderGrid):
        self.grid = grid
        N = grid.N
        self.N = N
        self.q = (N + 1) / (N - 1)
        self.a, self.b = constants(N, grid.sphere)
        self.phi = phi1(grid.sphere)
        t = grid.t
        self.base = (self.a * t ** ((1 - N) / 2))[:, None] * self.phi.values
        ph = self.phi.values
        a, q = self.a, self.q
        self.source1 = (N * (N - 1) / 2 * a * ph - a**q * ph**q)[None, :] * t[:, None] ** (-(N + 1) / 2)
        self.source2 = (N**2 - 1) / 4 * a * t ** (-(N + 3) / 2)
        self.lin = q * a ** (2 / (N - 1)) * ph**q

    def _diff(self, psi1, f2):
        full = self.base + psi1 + f2[:, None] * self.phi.values
        return np.abs(full) ** self.q - np.abs(self.base) ** self.q

    def N1(self, psi1, f2):
        return self.source1 - project_perp(self._diff(psi1, f2), self.phi)

    def N2(self, psi1, f2):
        t = self.grid.t
        inner = self._diff(psi1, f2) - self.lin[None, :] * (f2 / t)[:, None]
        return self.source2 - self.grid.sphere.quad(inner * self.phi.values)


@dataclass
class CriticalCell:
    grid: CylinderGrid
    a_N: float
    b_N: float
    sigma: float
    mu: float
    psi1: np.ndarray
    f2: np.ndarray
    phi: np.ndarray
    contraction_log: list
    lipschitz: float
    fixed_point_residual: float
    ball_norm: float
    t1_constant: float
    t2_constant: float
    shift: float
    pde_residual: float
    polished: bool = False
    _spline: RectBivariateSpline | None = field(default=None, repr=False)

    @property
    def N(self):
        return self.grid.N

    def orthogonality(self) -> float:
        ph = phi1(self.grid.sphere).values
        return float(np.max(np.abs(self.grid.sphere.quad(self.psi1 * ph))))

    def _interp(self):
        if self._spline is None:
            self._spline = RectBivariateSpline(self.grid.t, self.grid.alpha, self.phi, kx=3, ky=3)
        return self._spline

    def phi_at(self, t, alpha, dt=0, dalpha=0):
        """Cell profile at (t, alpha); beyond T it is continued as phi(T, .) (t/T)^{-b_N}."""
        t = np.asarray(t, dtype=float)
        alpha = np.clip(np.asarray(alpha, dtype=float), 0.0, 0.5 * math.pi)
        t, alpha = np.broadcast_arrays(t, alpha)
        if np.any(t < self.grid.t_star - 1e-12):
            raise PreconditionError("evaluation below t_* is outside the cell")
        T = self.grid.T
        spl = self._interp()
        inside = t <= T
        out = np.empty(t.shape)
        out[inside] = spl.ev(t[inside], alpha[inside], dx=dt, dy=dalpha)
        if np.any(~inside):
            tt = t[~inside]
            edge = spl.ev(np.full_like(tt, T), alpha[~inside], dx=0, dy=dalpha)
            b = self.b_N
            if dt == 0:
                fac = (tt / T) ** (-b)
            elif dt == 1:
                fac = -b / tt * (tt / T) ** (-b)
            else:
                fac = b * (b + 1) / tt**2 * (tt / T) ** (-b)
            out[~inside] = edge * fac
        return out

    def u(self, x, extra_shift=0.0):
        """u_1(x) = |x|^{-(N-1)} phi(t_* + shift - log|x|, alpha) on the unit half ball."""
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        alpha = np.arccos(np.clip(x[..., -1] / r, -1.0, 1.0))
        return r ** (1 - self.N) * self.phi_at(self.grid.t_star + extra_shift - np.log(r), alpha)


def fixed_point_solve(N: int = 2, t_star: float = 8.0, sigma: float = 0.75, mu: float = 0.5,
                      T: float | None = None, h_t: float = 0.1, n_alpha: int = 41,
                      tol: float = 1e-10, max_iter: int = 200, polish: bool = True) -> CriticalCell:
    """Picard iteration of (psi_1, f_2) = M(psi_1, f_2) from (0, 0)."""
    if not (N - 1) / 2 < sigma < (N + 1) / 2:
        raise ConfigError(f"sigma must satisfy (N-1)/2 < sigma < (N+1)/2, got {sigma}")
    if not 0 < mu < 1:
        raise ConfigError("mu must satisfy 0 < mu < 1")
    grid = CylinderGrid.with_step(N, t_star, T, h_t, n_alpha)
    t = grid.t
    t1 = T1Solver(grid)
    nl = Nonlinearities(grid)
    tail = (N + 3) / 2  # decay of the leading source term of N_2

    def M(psi, f):
        h = nl.N1(psi, f)
        psi_new = t1(h)
        f_new = T2_solve(ScalarTrack(t, nl.N2(psi, f), sigma), sigma, N, tail_exponent=tail).f.values
        return psi_new, f_new, h

    def dist(p1, f1, p2, f2):
        return _wnorm(t, p1 - p2, sigma) + mu * _wnorm(t, f1 - f2, sigma)

    psi = np.zeros((grid.nt, grid.n_alpha))
    f = np.zeros(grid.nt)
    log, ratios = [], []
    prev = None
    for k in range(1, max_iter + 1):
        psi_new, f_new, _ = M(psi, f)
        d = dist(psi_new, f_new, psi, f)
        if prev is not None and prev > 1e-13:
            ratios.append(d / prev)
        log.append({"iteration": k, "step": d, "ratio": ratios[-1] if ratios and prev else None})
        psi, f = psi_new, f_new
        if ratios and ratios[-1] >= 1.0 and d > tol:
            raise ContractionError(f"Lipschitz ratio {ratios[-1]:.3f} >= 1 at t_*={t_star}; increase t_*")
        if d <= tol:
            break
        prev = d
    else:
        raise ContractionError("fixed point iteration did not reach tolerance")

    psi_chk, f_chk, _ = M(psi, f)
    fp_res = dist(psi_chk, f_chk, psi, f)
    g1 = nl.N1(psi, f)
    t1c = _wnorm(t, psi, sigma) / max(_wnorm(t, g1, sigma), 1e-300)
    t2c = T2_solve(ScalarTrack(t, nl.N2(psi, f), sigma), sigma, N, tail_exponent=tail).constant
    a, b = nl.a, nl.b
    ph = nl.phi.values
    phi_full = nl.base + f[:, None] * ph + psi
    if np.any(phi_full[:, :-1] <= 0):
        raise AssemblyError("assembled cell is not positive")
    lip = max(ratios) if ratios else 0.0
    cell = CriticalCell(
        grid, a, b, sigma, mu, psi, f, phi_full, log, lip, fp_res,
        _wnorm(t, psi, sigma) + mu * _wnorm(t, f, sigma), t1c, t2c, t_star,
        cylinder_residual(grid, phi_full, t1),
    )
    if polish:
        polish_cell(cell, t1)
    return cell


def auto_t_star(N=2, sigma=0.75, mu=0.5, start=4.0, target=0.5, max_t_star=128.0, **kw) -> CriticalCell:
    """Double t_* from ``start`` until the measured Lipschitz ratio drops below ``target``."""
    t_star = start
    last_err = None
    while t_star <= max_t_star:
        try:
            cell = fixed_point_solve(N, t_star, sigma, mu, **kw)
            if cell.lipschitz < target:
                return cell
        except (ContractionError, AssemblyError, ConfigError) as exc:
            last_err = exc
        t_star *= 2.0
    raise ContractionError(f"no t_* <= {max_t_star} gave Lipschitz ratio < {target}: {last_err}")


def cylinder_residual(grid: CylinderGrid, phi: np.ndarray, t1: T1Solver) -> float:
    """Sup over interior nodes of the discrete (d_tt + N d_t + Delta_S + N-1) phi + |phi|^q."""
    N, h = grid.N, grid.h
    q = (N + 1) / (N - 1)
    L = laplace_beltrami_matrix(grid.sphere)
    r = (phi[2:] - 2 * phi[1:-1] + phi[:-2]) / h**2 + N * (phi[2:] - phi[:-2]) / (2 * h)
    r += phi[1:-1] @ L.T + (N - 1) * phi[1:-1] + np.abs(phi[1:-1]) ** q
    return float(np.max(np.abs(r[:, :-1])))


def _polish_matrix(grid: CylinderGrid, b: float):
    """Linear part on nodes t_1..t_{nt-1}; last row is the slow-manifold closure."""
    N, h, nt = grid.N, grid.h, grid.nt
    n = nt - 1
    lo = np.full(n - 1, 1.0 / h**2 - N / (2 * h))
    hi = np.full(n - 1, 1.0 / h**2 + N / (2 * h))
    main = np.full(n, -2.0 / h**2)
    D = sp.lil_matrix(sp.diags([lo, main, hi], [-1, 0, 1]))
    # phi_tt ~ -(b+1)/t phi_t along t^{-b} decay
    c = N - (b + 1) / grid.T
    D[n - 1, :] = 0.0
    D[n - 1, n - 1] = c * 1.5 / h
    D[n - 1, n - 2] = -c * 2.0 / h
    D[n - 1, n - 3] = c * 0.5 / h
    nb = grid.n_alpha - 1
    B = laplace_beltrami_matrix(grid.sphere)[:-1, :-1] + (N - 1) * sp.identity(nb)
    return (sp.kron(D.tocsr(), sp.identity(nb)) + sp.kron(sp.identity(n), B)).tocsr()


def polish_cell(cell: CriticalCell, t1: T1Solver | None = None, tol=1e-12, max_iter=60) -> CriticalCell:
    """Newton solve of the full cylinder equation from the fixed point.

    The (psi_1, f_2) system is solved as printed; this step removes the
    remaining defect so the cell is an exact discrete solution.  Data at t_*
    are kept; at T the slow-decay closure replaces the Dirichlet condition.
    """
    grid = cell.grid
    t1 = t1 or T1Solver(grid)
    N, h = grid.N, grid.h
    q = (N + 1) / (N - 1)
    nb = grid.n_alpha - 1
    n = grid.nt - 1
    A = _polish_matrix(grid, cell.b_N)
    phi = cell.phi.copy()
    bnd = np.zeros((n, nb))
    bnd[0] = (1.0 / h**2 - N / (2 * h)) * phi[0, :-1]
    bnd = bnd.ravel()
    x = phi[1:, :-1].ravel()

    def resid(y):
        return A @ y + bnd + np.abs(y) ** q

    R = resid(x)
    for _ in range(max_iter):
        rn = np.max(np.abs(R))
        if rn <= tol:
            break
        J = A + sp.diags(q * np.abs(x) ** (q - 1) * np.sign(x))
        dx = splu(J.tocsc()).solve(R)
        step = 1.0
        while step > 1e-4:
            y = x - step * dx
            Ry = resid(y)
            if np.max(np.abs(Ry)) < (1 - 1e-4 * step) * rn:
                break
            step *= 0.5
        x, R = y, Ry
    else:
        raise ContractionError("Newton polish of the cell did not converge")
    phi[1:, :-1] = x.reshape(n, nb)
    if np.any(phi[:, :-1] <= 0):
        raise AssemblyError("polished cell is not positive")
    cell.phi = phi
    cell.pde_residual = cylinder_residual(grid, phi, t1)
    cell.polished = True
    cell._spline = None
    return cell


@dataclass
class AsymptoticFit:
    slope: float
    intercept: float
    window: tuple
    shape_defect: float
    amplitude: float


def assemble_u1_critical(cell: CriticalCell, window=None) -> AsymptoticFit:
    """Fit log max_alpha phi(t, .) against log t over [2 t_*, T/2]."""
    grid = cell.grid
    lo, hi = window if window is not None else (2 * grid.t_star, grid.T / 2)
    t = grid.t
    sel = (t >= lo) & (t <= hi)
    if not np.any(sel):
        raise ConfigError("fit window is empty")
    amp = np.max(np.abs(cell.phi), axis=1)
    slope, icpt = np.polyfit(np.log(t[sel]), np.log(amp[sel]), 1)
    ph = phi1(grid.sphere).values
    j = int(np.argmin(np.abs(t - grid.T / 2)))
    shape = cell.phi[j] / amp[j] - ph / np.max(ph)
    return AsymptoticFit(float(slope), float(icpt), (lo, hi), float(np.max(np.abs(shape))), float(math.exp(icpt)))


# -- spectral refinement used by the gluing step -----------------------------

def _odd_basis(N: int, K: int):
    """Collocation nodes and odd zonal eigenfunctions on the half sphere.

    Returns ``(alpha, V, lam)``: K nodes in (0, pi/2) (positive Gauss nodes
    for the weight of S^{N-1}), V[j, k] = G_k(alpha_j) with G_k the degree
    2k+1 zonal harmonic, and the Delta_S eigenvalues -n(n+N-2).
    """
    n = 2 * np.arange(K) + 1
    if N == 2:
        alpha = (2 * np.arange(K) + 1) * math.pi / (4 * K)
        V = np.cos(np.outer(alpha, n))
    elif N == 3:
        x, _ = np.polynomial.legendre.leggauss(2 * K)
        x = np.sort(x[x > 0])[::-1]
        alpha = np.arccos(x)
        V = np.stack([np.polynomial.legendre.Legendre.basis(d)(x) for d in n], axis=1)
    else:
        raise ConfigError(f"spectral cell supports N in (2, 3), got {N}")
    return alpha, V, -(n * (n + N - 2)).astype(float)


def _basis_eval(N: int, K: int, alpha, d: int = 0):
    """d-th alpha-derivative of the K odd zonal harmonics at ``alpha`` (shape (..., K))."""
    alpha = np.asarray(alpha, float)[..., None]
    n = 2 * np.arange(K) + 1
    if N == 2:
        if d == 0:
            return np.cos(n * alpha)
        if d == 1:
            return -n * np.sin(n * alpha)
        return -(n**2) * np.cos(n * alpha)
    x = np.cos(alpha)
    s = np.sin(alpha)
    out = []
    for deg in n:
        P = np.polynomial.legendre.Legendre.basis(int(deg))
        if d == 0:
            out.append(P(x))
        elif d == 1:
            out.append(-s * P.deriv()(x))
        else:
            out.append(s * s * P.deriv(2)(x) - x * P.deriv()(x))
    return np.concatenate(out, axis=-1)


@dataclass
class SpectralCell:
    """Critical cell with modal angular representation.

    phi(t, alpha) = sum_k c_k(t) G_k(alpha) with c_k cubic splines in t on
    [t_*, T] and a slow-ODE continuation beyond T.  The profile is C^2, so
    the continuous cylinder residual can be evaluated exactly.
    """

    N: int
    t_star: float
    T: float
    b_N: float
    t: np.ndarray
    coeffs: np.ndarray
    pde_residual: float
    _splines: list = field(default=None, repr=False)

    @property
    def n_modes(self) -> int:
        return self.coeffs.shape[1]

    def _c(self, t, d):
        from scipy.interpolate import CubicSpline

        if self._splines is None:
            self._splines = CubicSpline(self.t, self.coeffs, axis=0)
        t = np.asarray(t, float)
        inside = t <= self.T
        out = np.empty(t.shape + (self.n_modes,))
        out[inside] = self._splines(t[inside], d)
        if np.any(~inside):
            # slow-ODE continuation: N c_0' = -kappa c_0^q gives c_0 = g^{-b} c_0(T) with
            # g = 1 + beta (t - T); higher modes are slaved to c_0^q
            tt = t[~inside][..., None]
            c_T = self.coeffs[-1]
            q = (self.N + 1) / (self.N - 1)
            # kappa from the projection of phi(T)^q; matching c_0'(T) instead
            # leaves an O(1/T) relative residual that never decays
            _, V, _ = _odd_basis(self.N, self.n_modes)
            kappa = np.linalg.solve(V, np.abs(V @ c_T) ** q)[0] / c_T[0] ** q
            beta = kappa * c_T[0] ** (q - 1) / (self.N * self.b_N)
            e = np.full(self.n_modes, q * self.b_N)
            e[0] = self.b_N
            g = 1.0 + beta * (tt - self.T)
            fac = g ** (-e)
            if d == 1:
                fac = -e * beta * fac / g
            elif d == 2:
                fac = e * (e + 1) * beta**2 * fac / g**2
            out[~inside] = c_T * fac
        return out

    def phi_at(self, t, alpha, dt: int = 0, dalpha: int = 0):
        """phi or its (dt, dalpha) derivative; alpha is folded to |alpha|."""
        t, alpha = np.broadcast_arrays(np.asarray(t, float), np.asarray(alpha, float))
        if np.any(t < self.t_star - 1e-12):
            raise PreconditionError("evaluation below t_* is outside the cell")
        sign = np.sign(alpha) if dalpha % 2 else 1.0
        a = np.clip(np.abs(alpha), 0.0, 0.5 * math.pi)
        G = _basis_eval(self.N, self.n_modes, a, dalpha)
        return sign * np.sum(self._c(t, dt) * G, axis=-1)

    def cylinder_residual(self, t, alpha):
        """(d_tt + N d_t + Delta_S + N - 1) phi + |phi|^q at (t, alpha)."""
        N = self.N
        q = (N + 1) / (N - 1)
        t, a = np.broadcast_arrays(np.asarray(t, float), np.abs(np.asarray(alpha, float)))
        lam = -(lambda n: n * (n + N - 2))(2 * np.arange(self.n_modes) + 1)
        G = _basis_eval(N, self.n_modes, a)
        c0, c1, c2 = self._c(t, 0), self._c(t, 1), self._c(t, 2)
        lin = np.sum((c2 + N * c1 + (lam + N - 1) * c0) * G, axis=-1)
        return lin + np.abs(np.sum(c0 * G, axis=-1)) ** q

    def u(self, x, extra_shift=0.0):
        x = np.asarray(x, dtype=float)
        r = np.linalg.norm(x, axis=-1)
        alpha = np.arccos(np.clip(x[..., -1] / r, -1.0, 1.0))
        return r ** (1 - self.N) * self.phi_at(self.t_star + extra_shift - np.log(r), alpha)


def spectral_cell(cell: CriticalCell, n_modes: int = 16, h_t: float = 0.05, T: float | None = None,
                  tol: float = 1e-11, max_iter: int = 40, guess=None) -> SpectralCell:
    """Re-solve the cylinder equation with a spectral angular operator.

    The finite-difference cell has an O(h_alpha^2) error in Delta_S, which
    leaves a continuous residual decaying only like t^{-b_N}.  Collocation
    at Gauss nodes removes it; the data at t_* and the closure at T are the
    same as in ``polish_cell``.  ``guess`` (a callable phi(t, alpha), e.g. a
    shorter SpectralCell's ``phi_at``) replaces ``cell`` as the Newton start,
    which is needed when T lies far beyond the finite-difference grid.
    """
    N = cell.N
    q = (N + 1) / (N - 1)
    t0 = cell.grid.t_star
    T = float(T if T is not None else cell.grid.T)
    nt = int(round((T - t0) / h_t)) + 1
    t = np.linspace(t0, T, nt)
    h = float(t[1] - t[0])
    alpha, V, lam = _odd_basis(N, n_modes)
    Vinv = np.linalg.inv(V)
    B = V @ np.diag(lam + N - 1) @ Vinv
    n = nt - 1
    lo = np.full(n - 1, 1.0 / h**2 - N / (2 * h))
    hi = np.full(n - 1, 1.0 / h**2 + N / (2 * h))
    start = cell.phi_at(t[:, None], alpha[None, :])
    if guess is not None:
        # Dirichlet data at T from the guess: the slow-closure row nearly
        # annihilates the slow translation mode, so the Jacobian degrades as T grows
        start[1:] = guess(t[1:, None], alpha[None, :])
        n -= 1
        lo, hi = lo[:-1], hi[:-1]
    D = sp.lil_matrix(sp.diags([lo, np.full(n, -2.0 / h**2), hi], [-1, 0, 1]))
    if guess is None:
        c = N - (cell.b_N + 1) / T
        D[n - 1, :] = 0.0
        D[n - 1, n - 1] = c * 1.5 / h
        D[n - 1, n - 2] = -c * 2.0 / h
        D[n - 1, n - 3] = c * 0.5 / h
    A = (sp.kron(D.tocsr(), sp.identity(n_modes)) + sp.kron(sp.identity(n), sp.csr_matrix(B))).tocsr()
    bnd = np.zeros((n, n_modes))
    bnd[0] = (1.0 / h**2 - N / (2 * h)) * start[0]
    if guess is not None:
        bnd[-1] += (1.0 / h**2 + N / (2 * h)) * start[-1]
    bnd = bnd.ravel()
    x = start[1:n + 1].ravel()

    def resid(y):
        return A @ y + bnd + np.abs(y) ** q

    R = resid(x)
    for _ in range(max_iter):
        rn = float(np.max(np.abs(R)))
        if rn <= tol:
            break
        J = A + sp.diags(q * np.abs(x) ** (q - 1) * np.sign(x))
        dx = splu(J.tocsc()).solve(R)
        step = 1.0
        while step > 1e-4:
            y = x - step * dx
            Ry = resid(y)
            if np.max(np.abs(Ry)) < (1 - 1e-4 * step) * rn:
                break
            step *= 0.5
        else:
            # non-monotone fallback: a full step may raise the sup residual once
            y = x - dx
            Ry = resid(y)
        x, R = y, Ry
    else:
        raise ContractionError(f"spectral polish stalled at residual {rn:.2e}")
    vals = np.vstack([start[:1], x.reshape(n, n_modes), start[n + 1:]])
    if np.any(vals <= 0):
        raise AssemblyError("spectral cell is not positive")
    return SpectralCell(N, t0, T, cell.b_N, t, vals @ Vinv.T, rn)
