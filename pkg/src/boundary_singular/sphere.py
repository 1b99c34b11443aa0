"""Axisymmetric calculus on the half sphere S^{N-1}_+.

Functions on the half sphere that depend only on the polar angle
``alpha`` (measured from the north pole, so ``theta_N = cos(alpha)``) are
sampled on a uniform grid over ``[0, pi/2]``.  The surface measure of such
functions reduces to ``c_N sin(alpha)^(N-2) d alpha`` where ``c_N`` is the
measure of the (N-2)-sphere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import InvalidGridError


@dataclass(frozen=True)
class ExponentParams:
    """Dimension ``N`` and exponent ``p`` with the derived constants."""

    N: int
    p: float

    def __post_init__(self):
        if self.N < 2:
            raise ValueError(f"dimension must satisfy N >= 2, got {self.N}")
        if not self.p > 1:
            raise ValueError(f"exponent must satisfy p > 1, got {self.p}")

    @property
    def m(self) -> float:
        """Homogeneity 2/(p-1) of the separable solution."""
        return 2.0 / (self.p - 1.0)

    @property
    def q(self) -> float:
        return (self.p + 1.0) / (self.p - 1.0)

    @property
    def lambda_p(self) -> float:
        q = self.q
        return (self.N - 1) - q * (self.N - q)

    @property
    def c_pN(self) -> float:
        """Amplitude of the radial singular solution; nan where undefined."""
        base = self.m * (self.N - 2 - self.m)
        if base <= 0:
            return math.nan
        return base ** (1.0 / (self.p - 1.0))

    @property
    def p_critical(self) -> float:
        return (self.N + 1) / (self.N - 1)

    @property
    def critical(self) -> bool:
        return math.isclose(self.p, self.p_critical, rel_tol=0, abs_tol=1e-14)

    @property
    def p_upper(self) -> float:
        """(N+1)/(N-3): upper end of the separable range; inf for N <= 3."""
        return math.inf if self.N <= 3 else (self.N + 1) / (self.N - 3)


def sphere_measure(k: int) -> float:
    """Total measure of the unit k-sphere S^k in R^{k+1}."""
    return 2.0 * math.pi ** ((k + 1) / 2.0) / math.gamma((k + 1) / 2.0)


def _gregory_weights(n: int, h: float) -> np.ndarray:
    # end-corrected trapezoid, exact for cubics
    w = np.full(n, h)
    corr = h * np.array([3 / 8, 7 / 6, 23 / 24])
    w[:3] = corr
    w[-3:] = corr[::-1]
    return w


@dataclass(frozen=True, eq=False)
class AxisymGrid:
    """Uniform polar-angle grid on [0, pi/2] with quadrature weights."""

    N: int
    n: int
    alpha: np.ndarray = field(init=False, repr=False)
    weights: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.n < 6:
            raise InvalidGridError(f"axisymmetric grid needs at least 6 nodes, got {self.n}")
        if self.N < 2:
            raise InvalidGridError(f"dimension must satisfy N >= 2, got {self.N}")
        alpha = np.linspace(0.0, 0.5 * np.pi, self.n)
        c_N = sphere_measure(self.N - 2)
        w = _gregory_weights(self.n, alpha[1] - alpha[0]) * c_N * np.sin(alpha) ** (self.N - 2)
        object.__setattr__(self, "alpha", alpha)
        object.__setattr__(self, "weights", w)

    @property
    def h(self) -> float:
        return float(self.alpha[1] - self.alpha[0])

    @property
    def cos(self) -> np.ndarray:
        return np.cos(self.alpha)

    def quad(self, values: np.ndarray) -> np.ndarray:
        """Integrate over the half sphere along the last axis."""
        return np.asarray(values) @ self.weights

    def profile(self, values) -> "SphericalProfile":
        return SphericalProfile(self, np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class SphericalProfile:
    grid: AxisymGrid
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != (self.grid.n,):
            raise InvalidGridError(
                f"profile has shape {self.values.shape}, grid has {self.grid.n} nodes"
            )

    def __add__(self, other):
        return SphericalProfile(self.grid, self.values + _vals(other))

    def __sub__(self, other):
        return SphericalProfile(self.grid, self.values - _vals(other))

    def __mul__(self, other):
        return SphericalProfile(self.grid, self.values * _vals(other))

    __rmul__ = __mul__


def _vals(x):
    return x.values if isinstance(x, SphericalProfile) else x


def laplace_beltrami_matrix(grid: AxisymGrid) -> sp.csr_matrix:
    """Sparse second-order matrix of f'' + (N-2) cot(alpha) f'.

    Pole row uses the limit (N-1) f''(0) with an even ghost node; the
    equator row uses one-sided second-order stencils.
    """
    n, h, N = grid.n, grid.h, grid.N
    a = grid.alpha
    rows, cols, vals = [], [], []

    def put(i, j, v):
        rows.append(i)
        cols.append(j)
        vals.append(v)

    put(0, 0, -2.0 * (N - 1) / h**2)
    put(0, 1, 2.0 * (N - 1) / h**2)
    cot = np.cos(a[1:-1]) / np.sin(a[1:-1])
    for k, i in enumerate(range(1, n - 1)):
        c = (N - 2) * cot[k] / (2 * h)
        put(i, i - 1, 1 / h**2 - c)
        put(i, i, -2 / h**2)
        put(i, i + 1, 1 / h**2 + c)
    i = n - 1
    cot_e = (N - 2) * math.cos(a[i]) / math.sin(a[i])
    for j, v in zip((i, i - 1, i - 2, i - 3), (2.0, -5.0, 4.0, -1.0)):
        put(i, j, v / h**2)
    for j, v in zip((i, i - 1, i - 2), (1.5, -2.0, 0.5)):
        put(i, j, cot_e * v / h)
    return sp.csr_matrix((vals, (rows, cols)), shape=(n, n))


def laplace_beltrami_axisym(f: SphericalProfile) -> SphericalProfile:
    """Discrete Laplace-Beltrami action on an axisymmetric profile."""
    if f.grid.n < 4:
        raise InvalidGridError("Laplace-Beltrami stencil needs at least 4 nodes")
    return SphericalProfile(f.grid, laplace_beltrami_matrix(f.grid) @ f.values)


def quad_halfsphere(f: SphericalProfile) -> float:
    return float(f.grid.quad(f.values))


def phi1(grid: AxisymGrid) -> SphericalProfile:
    """First Dirichlet eigenfunction cos(alpha), L2-normalised."""
    c = grid.cos
    c = np.where(np.arange(grid.n) == grid.n - 1, 0.0, c)
    return SphericalProfile(grid, c / math.sqrt(grid.quad(c * c)))


def constants(N: int, grid: AxisymGrid | None = None) -> tuple[float, float]:
    """Return ``(a_N, b_N)`` for the critical log-corrected ansatz.

    ``a_N`` makes the leading error orthogonal to phi_1:
    ``a_N = [2/(N(N-1)) * int phi_1^(2N/(N-1))]^(-(N-1)/2)``.
    """
    if N < 2:
        raise ValueError("N must be >= 2")
    grid = grid if grid is not None else AxisymGrid(N, 801)
    if grid.N != N:
        raise ValueError("grid dimension does not match N")
    ph = phi1(grid).values
    moment = grid.quad(ph ** (2.0 * N / (N - 1)))
    a_N = (2.0 / (N * (N - 1)) * moment) ** (-(N - 1) / 2.0)
    return float(a_N), (N - 1) / 2.0


def project_perp(h, phi: SphericalProfile):
    """Remove the phi_1 component; works on profiles or (..., n) arrays."""
    grid = phi.grid
    vals = _vals(h)
    coeff = grid.quad(vals * phi.values)
    out = vals - np.multiply.outer(coeff, phi.values)
    if isinstance(h, SphericalProfile):
        return SphericalProfile(grid, out)
    return out


def dirichlet_solve(grid: AxisymGrid, shift: float, rhs: np.ndarray) -> np.ndarray:
    """Solve (Delta_S + shift) f = rhs with f(pi/2) = 0."""
    from scipy.sparse.linalg import spsolve

    A = laplace_beltrami_matrix(grid)[:-1, :-1] + shift * sp.identity(grid.n - 1)
    f = np.zeros(grid.n)
    f[:-1] = spsolve(A.tocsc(), np.asarray(rhs, dtype=float)[:-1])
    return f
