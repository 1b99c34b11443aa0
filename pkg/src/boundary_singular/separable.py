"""Separable half-space cell r^{-2/(p-1)} phi_p(theta_N).

phi_p solves, in the polar angle alpha,

    f'' + (N-2) cot(alpha) f' + lambda_p f + f^p = 0,
    f'(0) = 0,  f(pi/2) = 0,  f > 0 on [0, pi/2),

and is computed by shooting on the pole amplitude s = f(0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicHermiteSpline

from .errors import ConfigError, NoSolutionError, PreconditionError
from .sphere import AxisymGrid, ExponentParams, SphericalProfile

HALF_PI = 0.5 * math.pi
_ALPHA0 = 1e-6


def _rhs(N, lam, p):
    def f(alpha, y):
        u, du = y
        return [du, -(N - 2) * math.cos(alpha) / math.sin(alpha) * du - lam * u - abs(u) ** p]

    return f


def _start(N, lam, p, s):
    # series at the pole: (N-1) f''(0) + lam s + s^p = 0
    f2 = -(lam * s + s**p) / (N - 1)
    return [s + 0.5 * f2 * _ALPHA0**2, f2 * _ALPHA0]


def _hit_zero(alpha, y):
    return y[0]


_hit_zero.terminal = True
_hit_zero.direction = -1


def _shoot(params: ExponentParams, s: float, dense=False, rtol=1e-12):
    N, p, lam = params.N, params.p, params.lambda_p
    return solve_ivp(
        _rhs(N, lam, p),
        (_ALPHA0, HALF_PI),
        _start(N, lam, p, s),
        method="DOP853",
        rtol=rtol,
        atol=1e-14,
        events=_hit_zero,
        dense_output=dense,
    )


def _miss(params, s) -> float:
    """Signed miss distance: f(pi/2) if positive throughout, else -(pi/2 - first zero)."""
    sol = _shoot(params, s)
    if sol.t_events[0].size:
        return -(HALF_PI - sol.t_events[0][0])
    return float(sol.y[0, -1])


@dataclass
class ShootingResult:
    params: ExponentParams
    s_star: float
    profile: SphericalProfile
    residual: float
    fd_defect: float
    _spline: CubicHermiteSpline

    def phi(self, alpha, nu=0):
        """Evaluate phi_p (or its nu-th derivative) at polar angles alpha."""
        alpha = np.clip(np.asarray(alpha, dtype=float), 0.0, HALF_PI)
        return self._spline(alpha, nu)

    def c2_surrogate(self) -> float:
        """max of |phi|, |phi'|, |phi''| on the profile grid."""
        a = self.profile.grid.alpha
        return float(max(np.max(np.abs(self.phi(a, k))) for k in range(3)))


def solve_phip(params: ExponentParams, tol: float = 1e-10, n_alpha: int = 401,
               s_max: float = 1e3) -> ShootingResult:
    """Positive solution of the half-sphere problem with smallest amplitude.

    Raises NoSolutionError when no sign change of the miss distance can be
    bracketed, which is the expected outcome at and below the critical
    exponent (N+1)/(N-1).
    """
    N, p = params.N, params.p
    if p >= params.p_upper:
        raise ConfigError(f"p must satisfy p < (N+1)/(N-3) = {params.p_upper}")
    s_lo, s_hi = 1e-4, None
    m_lo = _miss(params, s_lo)
    if m_lo <= 0:
        raise NoSolutionError(
            f"no positive solution bracketed for N={N}, p={p}: profile vanishes before the equator "
            "already at amplitude 1e-4 (p <= (N+1)/(N-1) leaves no branch)"
        )
    s = s_lo
    while s < s_max:
        s *= 2.0
        if _miss(params, s) < 0:
            s_hi = s
            break
        s_lo = s
    if s_hi is None:
        raise NoSolutionError(f"no sign change of the shooting miss up to amplitude {s_max}")
    for _ in range(200):
        mid = 0.5 * (s_lo + s_hi)
        if _miss(params, mid) > 0:
            s_lo = mid
        else:
            s_hi = mid
        if s_hi - s_lo <= tol * s_hi:
            break
    s_star = s_lo
    sol = _shoot(params, s_star, dense=True)
    end = sol.t[-1]
    residual = abs(float(sol.y[0, -1])) + (HALF_PI - end)

    fine = np.linspace(0.0, HALF_PI, 4001)
    inside = fine >= _ALPHA0
    vals = np.empty_like(fine)
    ders = np.empty_like(fine)
    y = sol.sol(np.minimum(fine[inside], end))
    vals[inside], ders[inside] = y[0], y[1]
    f2 = -(params.lambda_p * s_star + s_star**p) / (N - 1)
    vals[~inside] = s_star + 0.5 * f2 * fine[~inside] ** 2
    ders[~inside] = f2 * fine[~inside]
    vals[-1] = 0.0
    spline = CubicHermiteSpline(fine, vals, ders)

    grid = AxisymGrid(N, n_alpha)
    prof = SphericalProfile(grid, spline(grid.alpha))
    prof.values[-1] = 0.0
    if np.any(prof.values[:-1] <= 0):
        raise NoSolutionError("shooting produced a non-positive profile")
    from .sphere import laplace_beltrami_matrix

    defect = laplace_beltrami_matrix(grid) @ prof.values + params.lambda_p * prof.values \
        + np.abs(prof.values) ** p
    return ShootingResult(params, s_star, prof, residual, float(np.max(np.abs(defect[:-1]))), spline)


def u0_eval(x, result: ShootingResult) -> np.ndarray:
    """Separable solution |x|^{-m} phi_p(x_N/|x|) at points x (shape (..., N))."""
    x = np.asarray(x, dtype=float)
    r = np.linalg.norm(x, axis=-1)
    if np.any(r == 0):
        raise PreconditionError("u0 is singular at the origin")
    if np.any(x[..., -1] < 0):
        raise PreconditionError("points must lie in the closed upper half-space")
    alpha = np.arccos(np.clip(x[..., -1] / r, -1.0, 1.0))
    return r ** (-result.params.m) * result.phi(alpha)


def fd_laplacian(fn, x, h):
    """Second-order Cartesian finite-difference Laplacian of fn at points x."""
    x = np.asarray(x, dtype=float)
    f0 = fn(x)
    lap = np.zeros_like(f0)
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = h
        lap += fn(x + e) - 2 * f0 + fn(x - e)
    return lap / h**2


def u0_residual(result: ShootingResult, x, h: float) -> np.ndarray:
    fn = lambda y: u0_eval(y, result)
    return fd_laplacian(fn, x, h) + fn(np.asarray(x)) ** result.params.p


@dataclass
class BifurcationFit:
    N: int
    p: list
    amplitude: list
    ratio: list
    variation: float | None
    monotone: bool

    @property
    def defined(self) -> bool:
        return self.variation is not None


def verify_bifurcation(N: int, p_list) -> BifurcationFit:
    """Ratio max phi_p / (N - (p+1)/(p-1))^{1/(p-1)} along p decreasing to critical."""
    amps, ratios = [], []
    for p in p_list:
        params = ExponentParams(N, p)
        res = solve_phip(params)
        amp = float(np.max(res.profile.values))
        amps.append(amp)
        ratios.append(amp / (N - params.q) ** (1.0 / (p - 1.0)))
    variation = None
    if len(ratios) >= 2:
        variation = abs(ratios[-1] - ratios[-2]) / abs(ratios[-1])
    monotone = all(b < a for a, b in zip(amps, amps[1:]))
    return BifurcationFit(N, list(p_list), amps, ratios, variation, monotone)


def extend_cell_k(result: ShootingResult, k: int, points, h: float = 1e-3) -> dict:
    """FD residual of the cell extended constantly in k extra tangential variables.

    ``points`` has shape (M, n); the extended points are (y, x) with y drawn
    from a fixed box so that the extra coordinates vary.
    """
    if k < 0:
        raise PreconditionError("k must be >= 0")
    points = np.asarray(points, dtype=float)
    n = points.shape[-1]
    base = u0_residual(result, points, h)
    rng = np.random.default_rng(0)
    y = rng.uniform(-1.0, 1.0, size=(points.shape[0], k))
    ext = np.concatenate([y, points], axis=-1)
    fn = lambda z: u0_eval(z[..., k:], result)
    resid = fd_laplacian(fn, ext, h) + fn(ext) ** result.params.p
    return {
        "k": k,
        "n": n,
        "residual_extended": resid,
        "residual_base": base,
        "max_abs_difference": float(np.max(np.abs(resid - base))),
    }
