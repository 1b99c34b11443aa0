"""Glued boundary-singular solutions on the unit disk.

Scaled cells are placed at boundary points xi_i through Fermi coordinates
y = (s, d) (arc length along the circle, distance to it) and cut off at
radius 2R.  The corrector v solves

    Delta v = -(E + |W + v|^p - W^p)   in Omega,   v = 0 on the boundary,

where W is the sum of the cut-off cells and E = Delta W + W^p, by Picard
iteration of a P1 finite element solve on a mesh graded geometrically
toward each xi_i (structured polar patches, Delaunay elsewhere).  Triangles touching a singular point are
integrated with a collapsed (Duffy) rule split into geometric panels, so
sources behaving like |y|^{-2} are integrated to full accuracy.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.spatial import Delaunay
from scipy.sparse.linalg import splu

from .errors import ConfigError, ContractionError, PreconditionError, SingularSystemError, StageFailure

# Dunavant degree-5 rule: barycentric points and weights (sum 1)
_A1, _B1 = 0.059715871789770, 0.470142064105115
_A2, _B2 = 0.797426985353087, 0.101286507323456
_TRI_L = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_A1, _B1, _B1], [_B1, _A1, _B1], [_B1, _B1, _A1],
    [_A2, _B2, _B2], [_B2, _A2, _B2], [_B2, _B2, _A2],
])
_TRI_W = np.array([0.225] + [0.132394152788506] * 3 + [0.125939180544827] * 3)


# -- Fermi coordinates ----------------------------------------------------

@dataclass(frozen=True, eq=False)
class FermiChart:
    """Boundary Fermi coordinates for the unit disk (N = 2) or ball (N = 3).

    y = (s, d): s is the geodesic normal coordinate on the unit sphere
    centred at xi (arc length for the disk), d = 1 - |x| the distance to the
    boundary.  At xi the Jacobian is the identity in the frame
    (tangent(s), inward normal).
    """

    domain: str
    xi: np.ndarray
    frame: np.ndarray  # rows: tangent directions

    @property
    def N(self) -> int:
        return self.xi.size

    def to_fermi(self, x) -> np.ndarray:
        x = np.asarray(x, float)
        r = np.linalg.norm(x, axis=-1)
        # the centre has no chart coordinates; it maps to nan
        with np.errstate(invalid="ignore", divide="ignore"):
            w = x / r[..., None]
        c = np.clip(w @ self.xi, -1.0, 1.0)
        tang = w - c[..., None] * self.xi
        comp = tang @ self.frame.T
        nt = np.linalg.norm(comp, axis=-1)
        theta = np.arctan2(nt, c)
        # on the axis (xi or its antipode, the cut locus) pick the first frame direction
        axis = np.zeros(comp.shape[-1])
        axis[0] = 1.0
        with np.errstate(invalid="ignore", divide="ignore"):
            s = np.where(nt[..., None] > 0, comp * (theta / nt)[..., None], theta[..., None] * axis)
        return np.concatenate([s, (1.0 - r)[..., None]], axis=-1)

    def from_fermi(self, y) -> np.ndarray:
        y = np.asarray(y, float)
        s, d = y[..., :-1], y[..., -1]
        theta = np.linalg.norm(s, axis=-1)
        with np.errstate(invalid="ignore", divide="ignore"):
            e = np.where(theta[..., None] > 0, s / theta[..., None], 0.0) @ self.frame
        w = np.cos(theta)[..., None] * self.xi + np.sin(theta)[..., None] * e
        return (1.0 - d)[..., None] * w


def fermi_map(domain: str, xi) -> FermiChart:
    """Fermi chart of the unit disk or ball at the boundary point ``xi``."""
    xi = np.asarray(xi, float)
    if domain == "disk" and xi.size != 2 or domain == "ball" and xi.size != 3:
        raise ConfigError(f"a {domain} point needs {2 if domain == 'disk' else 3} coordinates")
    if domain not in ("disk", "ball"):
        raise ConfigError(f"domain must be 'disk' or 'ball', got {domain!r}")
    if abs(np.linalg.norm(xi) - 1.0) > 1e-12:
        raise PreconditionError(f"ξ must lie on the boundary |x| = 1, got |ξ| = {np.linalg.norm(xi):.15g}")
    if xi.size == 2:
        frame = np.array([[-xi[1], xi[0]]])
    else:
        a = np.eye(3)[int(np.argmin(np.abs(xi)))]
        t1 = a - (a @ xi) * xi
        t1 /= np.linalg.norm(t1)
        frame = np.stack([t1, np.cross(xi, t1)])
    return FermiChart(domain, xi, frame)


def laplacian_discrepancy(chart: FermiChart, fn, y, h: float = 1e-4) -> np.ndarray:
    """(Delta_x - Delta_y) applied to F(y) = fn(y), by central differences.

    Delta_x is the Euclidean Laplacian of F o chart^{-1}; Delta_y the flat
    one in Fermi coordinates.  The difference is O(|y|) second derivatives
    plus O(1) first derivatives.
    """
    y = np.atleast_2d(np.asarray(y, float))
    n = chart.N
    x = chart.from_fermi(y)

    def F_of_x(z):
        return fn(chart.to_fermi(z))

    lap_x = np.zeros(len(y))
    lap_y = np.zeros(len(y))
    for i in range(n):
        e = np.zeros(n)
        e[i] = h
        lap_x += F_of_x(x + e) - 2 * F_of_x(x) + F_of_x(x - e)
        lap_y += fn(y + e) - 2 * fn(y) + fn(y - e)
    return (lap_x - lap_y) / h**2


# -- cell profiles ------------------------------------------------------------

class CellProfile:
    """Cylinder profile Psi(t, alpha) of a half-space cell u_1 = |x|^{-m} Psi(-log|x|, alpha).

    ``residual`` returns Psi_tt + (2m-N+2) Psi_t + (m(m-N+2) + Delta_S) Psi + |Psi|^p,
    i.e. |x|^{m+2} (Delta u_1 + u_1^p).
    """

    m: float
    p: float
    N: int
    t_max: float = math.inf  # profile argument beyond which it is extrapolated

    def psi(self, t, alpha, dt=0, dalpha=0):  # pragma: no cover - interface
        raise NotImplementedError

    def residual(self, t, alpha):  # pragma: no cover - interface
        raise NotImplementedError


class CriticalProfile(CellProfile):
    """Profile of a spectral critical cell: Psi(t, alpha) = phi(t_* + t, alpha), t >= 0."""

    def __init__(self, cell):
        self.cell = cell
        self.N = cell.N
        self.m = float(cell.N - 1)
        self.p = (cell.N + 1) / (cell.N - 1)
        self.t_max = cell.T - cell.t_star

    def psi(self, t, alpha, dt=0, dalpha=0):
        return self.cell.phi_at(np.asarray(t) + self.cell.t_star, alpha, dt, dalpha)

    def residual(self, t, alpha):
        return self.cell.cylinder_residual(np.asarray(t) + self.cell.t_star, alpha)


# -- configuration ------------------------------------------------------------

@dataclass
class GlueConfig:
    domain: str = "disk"
    singular_points: list = field(default_factory=lambda: [0.0])
    k: int = 0
    p: float = 3.0
    eps: float = 1e-3
    R: float = 0.2
    delta: float | None = None  # defaults to 2 - n, the top of the window
    h0: float = 0.1
    log_step: float = 0.4
    decades: float = 6.0

    def __post_init__(self):
        if self.delta is None:
            self.delta = float(2 - self.n)

    @property
    def n(self) -> int:
        return 2 if self.domain == "disk" else 3

    def points(self) -> np.ndarray:
        """Boundary points as unit vectors (disk points may be given as angles)."""
        pts = []
        for q in self.singular_points:
            q = np.atleast_1d(np.asarray(q, float))
            if self.domain == "disk" and q.size == 1:
                q = np.array([math.cos(q[0]), math.sin(q[0])])
            pts.append(q)
        return np.array(pts)

    @property
    def rho_min(self) -> float:
        return 2 * self.R * 10.0 ** (-self.decades)

    def validate(self) -> None:
        if self.domain not in ("disk", "ball"):
            raise ConfigError(f"domain must be 'disk' or 'ball', got {self.domain!r}")
        if self.k != 0:
            raise ConfigError("k must be 0 (curve singular sets are checked with extend_cell_k)")
        n = self.n
        if not self.p >= (n + 1) / (n - 1):
            raise ConfigError(f"p must be at least (n+1)/(n-1) = {(n + 1) / (n - 1):g}, got {self.p:g}")
        if not 0 < self.eps < 1:
            raise ConfigError(f"ε must lie in (0, 1), got {self.eps:g}")
        if not (1 - n < self.delta <= 2 - n):
            raise ConfigError(f"δ must lie in (1−n, 2−n] = ({1 - n}, {2 - n}], got {self.delta:g}")
        if not self.R > 0:
            raise ConfigError("R must be positive")
        pts = self.points()
        if len(pts) == 0:
            raise ConfigError("at least one singular point is required")
        for q in pts:
            if abs(np.linalg.norm(q) - 1.0) > 1e-9:
                raise PreconditionError("singular points must lie on the boundary")
        if len(pts) > 1:
            dmin = min(np.linalg.norm(a - b) for i, a in enumerate(pts) for b in pts[i + 1:])
            if not 2 * self.R < dmin:
                raise ConfigError(f"2R must be below the minimum pairwise distance {dmin:.4g}, got R = {self.R:g}")
        if not 0 < self.log_step <= 1.0 or not self.h0 > 0:
            raise ConfigError("mesh steps must be positive (log_step <= 1)")

    def refined(self, level: int) -> "GlueConfig":
        """Same configuration with mesh steps divided by 2^level."""
        return dataclasses.replace(self, h0=self.h0 / 2**level, log_step=self.log_step / 2**level)


# -- cutoff and glued field -----------------------------------------------

def _cutoff(rho, R):
    """eta = 1 on [0, R], 0 beyond 2R (quintic), with two derivatives."""
    x = np.clip((2 * R - rho) / R, 0.0, 1.0)
    inside = (x > 0) & (x < 1)
    eta = x**3 * (10 - 15 * x + 6 * x**2)
    d1 = np.where(inside, 30 * x**2 * (1 - x) ** 2, 0.0) * (-1.0 / R)
    d2 = np.where(inside, 60 * x * (1 - x) * (1 - 2 * x), 0.0) / R**2
    return eta, d1, d2


@dataclass
class Bump:
    chart: FermiChart
    eps: float
    R: float
    profile: CellProfile


def _pow_diff(W, v, p):
    """|W + v|^p - |W|^p, accurate when |v| << W."""
    W, v = np.broadcast_arrays(W, v)
    out = np.abs(W + v) ** p - np.abs(W) ** p
    ok = (W > 0) & (np.abs(v) < 0.5 * W)
    if np.any(ok):
        out[ok] = W[ok] ** p * np.expm1(p * np.log1p(v[ok] / W[ok]))
    return out


_CHUNK = 100_000


class GluedField:
    """Sum of cut-off scaled cells and its exact error E = Delta W + W^p."""

    def __init__(self, bumps: list[Bump], p: float):
        self.bumps = list(bumps)
        self.p = p

    def add(self, bump: Bump) -> "GluedField":
        return GluedField(self.bumps + [bump], self.p)

    def evaluate(self, x, want_error=True):
        """Return (W, E) at points x of shape (..., 2)."""
        x = np.asarray(x, float)
        shape = x.shape[:-1]
        X = x.reshape(-1, x.shape[-1])
        W = np.zeros(len(X))
        E = np.zeros(len(X))
        for b in self.bumps:
            y = b.chart.to_fermi(X)
            rho = np.linalg.norm(y, axis=-1)
            sel = (rho < 2 * b.R) & (rho > 0)
            if not np.any(sel):
                continue
            idx = np.flatnonzero(sel)
            for lo in range(0, len(idx), _CHUNK):
                j = idx[lo:lo + _CHUNK]
                w, e = _bump_terms(b, y[j], rho[j], want_error)
                W[j] += w
                E[j] += e
        return W.reshape(shape), E.reshape(shape)

    def value(self, x):
        return self.evaluate(x, want_error=False)[0]


def _bump_terms(b: Bump, y, rho, want_error):
    prof = b.profile
    m, p = prof.m, prof.p
    s, d = y[:, 0], y[:, -1]
    if y.shape[1] > 2:
        s = np.linalg.norm(y[:, :-1], axis=-1)
    alpha = np.arctan2(s, d)
    t = -math.log(b.eps) - np.log(rho)
    P = prof.psi(t, alpha)
    eta, e1, e2 = _cutoff(rho, b.R)
    W = rho ** (-m) * P
    if not want_error:
        return eta * W, np.zeros_like(W)
    Pt = prof.psi(t, alpha, 1)
    Ptt = prof.psi(t, alpha, 2)
    Pa = prof.psi(t, alpha, 0, 1)
    Paa = prof.psi(t, alpha, 0, 2)
    Pta = prof.psi(t, alpha, 1, 1)
    Wr = -rho ** (-m - 1) * (m * P + Pt)
    Wrr = rho ** (-m - 2) * (m * (m + 1) * P + (2 * m + 1) * Pt + Ptt)
    Wa = rho ** (-m) * Pa
    Waa = rho ** (-m) * Paa
    Wra = -rho ** (-m - 1) * (m * Pa + Pta)
    Q = eta * W
    Qr = e1 * W + eta * Wr
    Qrr = e2 * W + 2 * e1 * Wr + eta * Wrr
    Qa, Qaa, Qra = eta * Wa, eta * Waa, e1 * Wa + eta * Wra
    n = prof.N
    # flat part: eta (Delta W + W^p) + (eta^p - eta) W^p + 2 eta' W_r + W (eta'' + (n-1) eta'/r)
    flat = eta * rho ** (-m - 2) * prof.residual(t, alpha) + (eta**p - eta) * np.abs(W) ** p
    flat += 2 * e1 * Wr + W * (e2 + (n - 1) * e1 / rho)
    ca, sa = np.cos(alpha), np.sin(alpha)
    Qd = ca * Qr - sa / rho * Qa
    Qs = sa * Qr + ca / rho * Qa
    Qss = sa**2 * Qrr + 2 * sa * ca / rho * Qra + ca**2 / rho * Qr - 2 * sa * ca / rho**2 * Qa \
        + ca**2 / rho**2 * Qaa
    if n == 2:
        metric = -Qd / (1 - d) + Qss * ((1 - d) ** -2 - 1)
    else:
        # ball: flat Delta_y = Q_dd + Q_ss + Q_s/s; sphere part uses cot(s)
        with np.errstate(invalid="ignore", divide="ignore"):
            qs_s = np.where(s > 0, Qs / s, Qss)
            qs_cot = np.where(s > 0, Qs / np.tan(s), Qss)
        metric = -2 * Qd / (1 - d) + (Qss + qs_cot) / (1 - d) ** 2 - Qss - qs_s
    return Q, flat + metric


def build_u_eps(config: GlueConfig, profile: CellProfile, eps_list=None, R_list=None) -> GluedField:
    """u_eps = sum_i chi_R eps^m u_1(eps y_i) in the Fermi chart of each xi_i."""
    config.validate()
    pts = config.points()
    eps_list = eps_list if eps_list is not None else [config.eps] * len(pts)
    R_list = R_list if R_list is not None else [config.R] * len(pts)
    for i in range(len(pts)):
        for j in range(i):
            if np.linalg.norm(pts[i] - pts[j]) <= 2 * R_list[i] + 2 * R_list[j]:
                raise ConfigError("cutoff supports overlap: 2R_i + 2R_j must be below |ξ_i − ξ_j|")
    if abs(profile.p - config.p) > 1e-12:
        raise ConfigError(f"cell exponent {profile.p:g} does not match p = {config.p:g}")
    bumps = [Bump(fermi_map(config.domain, q), e, r, profile) for q, e, r in zip(pts, eps_list, R_list)]
    return GluedField(bumps, config.p)


# -- mesh ---------------------------------------------------------------------

@dataclass
class DiskMesh:
    """Triangulation of the unit disk graded geometrically toward given points."""

    points: np.ndarray
    triangles: np.ndarray
    boundary: np.ndarray
    singular_nodes: np.ndarray
    centres: np.ndarray
    rho_min: float
    _affine: np.ndarray = field(default=None, repr=False)

    @property
    def n_nodes(self) -> int:
        return len(self.points)

    @property
    def areas(self) -> np.ndarray:
        P = self.points[self.triangles]
        a, b = P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]
        return 0.5 * np.abs(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0])

    def locate(self, x):
        """Triangle index and barycentric coordinates of points x."""
        x = np.atleast_2d(np.asarray(x, float))
        if self._affine is None:
            P = self.points[self.triangles]
            M = np.stack([P[:, 1] - P[:, 0], P[:, 2] - P[:, 0]], axis=2)
            self._affine = np.linalg.inv(M)
        P0 = self.points[self.triangles[:, 0]]
        idx = np.empty(len(x), int)
        lam = np.empty((len(x), 3))
        for k, z in enumerate(x):
            l12 = np.einsum("tij,tj->ti", self._affine, z - P0)
            l = np.column_stack([1 - l12.sum(axis=1), l12])
            j = int(np.argmax(l.min(axis=1)))
            if l[j].min() < -1e-9:
                # the sliver between a boundary chord and the circle maps to -1
                if np.linalg.norm(z) > 1 + 1e-12:
                    raise PreconditionError("point outside the disk")
                idx[k], lam[k] = -1, 0.0
                continue
            idx[k], lam[k] = j, l[j]
        return idx, lam

    def interpolate(self, values, x):
        """P1 interpolant, extended by zero to the slivers outside the polygon."""
        s, lam = self.locate(x)
        out = np.sum(lam * values[self.triangles[s]], axis=1)
        out[s < 0] = 0.0
        return out


def _polar_patch(c, rho, n_ring):
    """Structured rings about the boundary point c; ring ends lie on the circle."""
    n_in = -c
    tau = np.array([-c[1], c[0]])
    rings = []
    for r in rho:
        bmax = math.acos(min(1.0, r / 2))
        beta = np.linspace(-bmax, bmax, n_ring + 1)
        ring = c + r * (np.cos(beta)[:, None] * n_in + np.sin(beta)[:, None] * tau)
        ring[[0, -1]] /= np.linalg.norm(ring[[0, -1]], axis=1)[:, None]
        rings.append(ring)
    pts = np.vstack([c[None]] + rings)
    bnd = np.zeros(len(pts), bool)
    bnd[0] = True
    m = n_ring + 1
    node = lambda k, j: 1 + k * m + j
    for k in range(len(rho)):
        bnd[node(k, 0)] = bnd[node(k, n_ring)] = True
    tris = [[0, node(0, j), node(0, j + 1)] for j in range(n_ring)]
    for k in range(len(rho) - 1):
        for j in range(n_ring):
            a, b, cc, d = node(k, j), node(k, j + 1), node(k + 1, j + 1), node(k + 1, j)
            tris += [[a, b, cc], [a, cc, d]]
    return pts, bnd, np.array(tris), pts[1 + (len(rho) - 1) * m:]


def disk_mesh(centres, h0: float, log_step: float, rho_min: float, rho_max: float | None = None) -> DiskMesh:
    """Polar patches graded toward each centre, Delaunay lattice elsewhere.

    Qhull merges nodes closer than about 1e-7 times the domain size, so the
    patches are built structurally and only the coarse remainder (lattice,
    boundary nodes and each outermost ring) is triangulated.
    """
    centres = np.atleast_2d(np.asarray(centres, float))
    rho_max = rho_max if rho_max is not None else min(0.5, 1.2 * h0 / log_step)
    n_ring = int(math.ceil(math.pi / log_step))
    rho = rho_min * np.exp(log_step * np.arange(int(math.log(rho_max / rho_min) / log_step) + 1))
    rho_out = rho[-1]
    nb = int(math.ceil(2 * math.pi / h0))
    th = 2 * math.pi * np.arange(nb) / nb
    circ = np.column_stack([np.cos(th), np.sin(th)])
    ys = np.arange(-1.0, 1.0 + h0, h0 * math.sqrt(3) / 2)
    lat = []
    for j, yy in enumerate(ys):
        xs = np.arange(-1.0, 1.0 + h0, h0) + (0.5 * h0 if j % 2 else 0.0)
        lat.append(np.column_stack([xs, np.full_like(xs, yy)]))
    lat = np.vstack(lat)
    lat = lat[np.linalg.norm(lat, axis=1) < 1 - 0.5 * h0]

    def far(z, gap):
        return np.all(np.linalg.norm(z[:, None, :] - centres[None], axis=-1) > rho_out + gap, axis=1)

    gap = 0.8 * rho_out * (math.pi / n_ring)
    outer = [lat[far(lat, gap)], circ[far(circ, gap)]]
    pts, bnd, tris, shells = [], [], [], []
    offset = 0
    for c in centres:
        P, B, T, shell = _polar_patch(c, rho, n_ring)
        pts.append(P)
        bnd.append(B)
        tris.append(T + offset)
        shells.append(np.arange(len(P) - len(shell), len(P)) + offset)
        offset += len(P)
    n_lat = len(outer[0])
    outer_pts = np.vstack(outer)
    outer_bnd = np.zeros(len(outer_pts), bool)
    outer_bnd[n_lat:] = True
    shell_idx = np.concatenate(shells)
    P_all = np.vstack(pts + [outer_pts])
    B_all = np.concatenate(bnd + [outer_bnd])
    glob = np.concatenate([shell_idx, offset + np.arange(len(outer_pts))])
    dl = Delaunay(P_all[glob])
    T_out = glob[dl.simplices]
    # discard triangles inside a patch (all vertices on one outermost ring)
    owner = np.full(len(P_all), -1)
    for i, s in enumerate(shells):
        owner[s] = i
    o = owner[T_out]
    inside = (o[:, 0] >= 0) & (o[:, 0] == o[:, 1]) & (o[:, 1] == o[:, 2])
    T = np.vstack(tris + [T_out[~inside]])
    mesh = DiskMesh(P_all, T, B_all, np.array([len(_p) for _p in pts]).cumsum() - np.array([len(_p) for _p in pts]),
                    centres, float(rho_min))
    _check_mesh(mesh, P_all[B_all])
    return mesh


def _check_mesh(mesh: DiskMesh, boundary_points) -> None:
    A = mesh.areas
    if np.any(A <= 0) or len(np.unique(mesh.triangles)) != mesh.n_nodes:
        raise SingularSystemError("degenerate or orphaned elements in the graded mesh")
    ang = np.sort(np.arctan2(boundary_points[:, 1], boundary_points[:, 0]))
    gaps = np.diff(np.concatenate([ang, ang[:1] + 2 * math.pi]))
    polygon = 0.5 * np.sum(np.sin(gaps))
    if abs(A.sum() - polygon) > 1e-9 * polygon:
        raise SingularSystemError(f"mesh area {A.sum():.12g} does not match the polygon {polygon:.12g}")


# -- quadrature -----------------------------------------------------------

@dataclass
class Quadrature:
    x: np.ndarray
    w: np.ndarray
    tri: np.ndarray
    lam: np.ndarray
    rho_min: float = 0.0  # smallest distance from a quadrature point to a singular point

    def interp(self, mesh: DiskMesh, values):
        return np.sum(self.lam * values[mesh.triangles[self.tri]], axis=1)

    def integrate(self, f):
        return float(np.sum(self.w * f))

    def load(self, mesh: DiskMesh, f):
        """Vector of int f psi_i over hat functions."""
        idx = mesh.triangles[self.tri]
        return np.bincount(idx.ravel(), weights=(self.lam * (self.w * f)[:, None]).ravel(),
                           minlength=mesh.n_nodes)


def mesh_quadrature(mesh: DiskMesh, r_floor: float = 1e-13, panel_ratio: float = 0.25,
                    n_r: int = 6, n_s: int = 8) -> Quadrature:
    """Degree-5 rule on regular triangles; collapsed geometric rule at singular vertices.

    The geometric panels stop at distance ``r_floor`` from the vertex: closer
    points are not representable next to |x| = 1, and the neglected part of
    a |y|^{-2}-type integrand is O(r_floor).
    """
    T, P = mesh.triangles, mesh.points
    area = mesh.areas
    fan = np.isin(T, mesh.singular_nodes)
    is_fan = fan.any(axis=1)
    reg = np.flatnonzero(~is_fan)
    lam = np.tile(_TRI_L, (len(reg), 1))
    tri = np.repeat(reg, len(_TRI_W))
    w = (area[reg][:, None] * _TRI_W[None]).ravel()
    xs = np.einsum("qk,qkd->qd", lam, P[T[tri]])
    gr, wr = np.polynomial.legendre.leggauss(n_r)
    gs, ws = np.polynomial.legendre.leggauss(n_s)
    ss, sw = (gs + 1) / 2, ws / 2
    fl, ft, fw, fx = [lam], [tri], [w], [xs]
    # collapsed coordinates: x = c + r((1-s)(a-c) + s(b-c)), jacobian 2|T| r
    for j in np.flatnonzero(is_fan):
        pos = int(np.flatnonzero(fan[j])[0])
        order = [pos, (pos + 1) % 3, (pos + 2) % 3]
        c, a, b = P[T[j, order[0]]], P[T[j, order[1]]], P[T[j, order[2]]]
        size = max(np.linalg.norm(a - c), np.linalg.norm(b - c))
        n_panels = max(1, int(math.ceil(math.log(r_floor / size) / math.log(panel_ratio))))
        k = np.arange(n_panels)[:, None]
        hi, lo = panel_ratio**k, panel_ratio ** (k + 1)
        rr = (lo + (hi - lo) * (gr + 1) / 2).ravel()
        rw = ((hi - lo) / 2 * wr).ravel()
        R_, S_ = np.meshgrid(rr, ss, indexing="ij")
        WR = (np.outer(rw, sw) * R_).ravel()
        R_, S_ = R_.ravel(), S_.ravel()
        L = np.zeros((len(R_), 3))
        L[:, order[0]] = 1 - R_
        L[:, order[1]] = R_ * (1 - S_)
        L[:, order[2]] = R_ * S_
        fl.append(L)
        ft.append(np.full(len(R_), j))
        fw.append(2 * area[j] * WR)
        fx.append(c + R_[:, None] * ((1 - S_)[:, None] * (a - c) + S_[:, None] * (b - c)))
    X = np.vstack(fx)
    return Quadrature(X, np.concatenate(fw), np.concatenate(ft), np.vstack(fl),
                      float(gamma(mesh, X, 0.0).min()))


def stiffness(mesh: DiskMesh) -> sp.csr_matrix:
    P, T = mesh.points, mesh.triangles
    x, y = P[T, 0], P[T, 1]
    b = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
    c = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
    area = mesh.areas
    K = (b[:, :, None] * b[:, None, :] + c[:, :, None] * c[:, None, :]) / (4 * area)[:, None, None]
    rows = np.repeat(T, 3, axis=1).ravel()
    cols = np.tile(T, (1, 3)).ravel()
    return sp.csr_matrix((K.ravel(), (rows, cols)), shape=(mesh.n_nodes, mesh.n_nodes))


def gamma(mesh_or_centres, x, floor: float):
    """Mollified distance to the singular points: min_i sqrt(|x - xi_i|^2 + floor^2)."""
    c = mesh_or_centres.centres if isinstance(mesh_or_centres, DiskMesh) else np.atleast_2d(mesh_or_centres)
    x = np.asarray(x, float)
    d2 = np.min(np.sum((x[..., None, :] - c) ** 2, axis=-1), axis=-1)
    return np.sqrt(d2 + floor**2)


class DirichletSolver:
    """Factored P1 Dirichlet Laplacian on a graded disk mesh."""

    def __init__(self, mesh: DiskMesh):
        self.mesh = mesh
        K = stiffness(mesh)
        self.inner = np.flatnonzero(~mesh.boundary)
        try:
            self._lu = splu(K[self.inner][:, self.inner].tocsc())
        except RuntimeError as exc:
            raise SingularSystemError(str(exc)) from exc

    def solve_load(self, load) -> np.ndarray:
        """u with int grad u . grad psi = load(psi) and u = 0 on the boundary."""
        u = np.zeros(self.mesh.n_nodes)
        u[self.inner] = self._lu.solve(load[self.inner])
        return u


@dataclass
class CorrectorResult:
    u: np.ndarray
    norm_u: float
    norm_f: float
    constant: float


@dataclass
class ManufacturedStudy:
    levels: list
    l2_errors: np.ndarray
    max_errors: np.ndarray  # nodal, at distance > 0.1 from the singular points
    constants: np.ndarray
    order: float  # from the L2 errors of the last two levels

    @property
    def constant_spread(self) -> float:
        return float(np.ptp(self.constants) / np.mean(self.constants))


def manufactured_corrector(delta: float, xi, floor: float):
    """u = gamma^delta (1 - |x|^2) and f = gamma^2 Delta u for one point xi (disk)."""
    xi = np.asarray(xi, float)

    def u(x):
        g2 = np.sum((x - xi) ** 2, axis=-1) + floor**2
        return g2 ** (delta / 2) * (1 - np.sum(x**2, axis=-1))

    def f(x):
        r2 = np.sum((x - xi) ** 2, axis=-1)
        g2 = r2 + floor**2
        lap_g = 2 * delta * g2 ** (delta / 2 - 1) + delta * (delta - 2) * r2 * g2 ** (delta / 2 - 2)
        dot = delta * g2 ** (delta / 2 - 1) * np.sum((x - xi) * (-2 * x), axis=-1)
        return g2 * ((1 - np.sum(x**2, axis=-1)) * lap_g + 2 * dot - 4 * g2 ** (delta / 2))

    return u, f


def manufactured_study(delta: float = 0.0, levels=(2, 3, 4), base: GlueConfig | None = None) -> ManufacturedStudy:
    """Recover gamma^delta (1 - |x|^2) under refinement; L2 error should fall like h^2.

    The nodal max error carries the usual log(1/h) factor of P1 elements, so
    its observed order sits slightly below 2 on coarse levels.
    """
    base = base or GlueConfig(singular_points=[0.0], delta=delta)
    l2, mx, cs = [], [], []
    for lev in levels:
        c = base.refined(lev)
        mesh = disk_mesh(c.points(), c.h0, c.log_step, c.rho_min)
        u_ex, f = manufactured_corrector(delta, c.points()[0], mesh.rho_min)
        q = mesh_quadrature(mesh)
        res = weighted_corrector_solve(f, mesh, delta, quad=q)
        e = q.interp(mesh, res.u) - u_ex(q.x)
        l2.append(math.sqrt(q.integrate(e**2)))
        far = gamma(mesh, mesh.points, 0.0) > 0.1
        mx.append(float(np.max(np.abs(res.u - u_ex(mesh.points))[far])))
        cs.append(res.constant)
    l2 = np.array(l2)
    order = float(np.log2(l2[-2] / l2[-1]) / (levels[-1] - levels[-2]))
    return ManufacturedStudy(list(levels), l2, np.array(mx), np.array(cs), order)


def weighted_corrector_solve(f, mesh: DiskMesh, delta: float, quad: Quadrature | None = None,
                             solver: DirichletSolver | None = None, floor: float | None = None) -> CorrectorResult:
    """Solve Delta u = gamma^{-2} f in the disk, u = 0 on the boundary.

    ``f`` is a callable of points (..., 2).  Returns u at the nodes with the
    measured constant ||gamma^{-delta} u|| / ||gamma^{-delta} f|| (sups over
    nodes and quadrature points).
    """
    floor = mesh.rho_min if floor is None else floor
    quad = quad or mesh_quadrature(mesh)
    solver = solver or DirichletSolver(mesh)
    g = gamma(mesh, quad.x, floor)
    fq = np.asarray(f(quad.x), float)
    u = solver.solve_load(-quad.load(mesh, fq / g**2))
    gn = gamma(mesh, mesh.points, floor)
    nu = float(np.max(gn ** (-delta) * np.abs(u)))
    nf = float(np.max(g ** (-delta) * np.abs(fq)))
    return CorrectorResult(u, nu, nf, nu / nf if nf > 0 else 0.0)


# -- fixed point ------------------------------------------------------------

@dataclass
class GlueSolution:
    config: GlueConfig
    field: GluedField
    mesh: DiskMesh
    quad: Quadrature
    v: np.ndarray
    lipschitz: float
    ratios: list
    iterations: int
    v_norm: float
    residual_norm: float
    c0: float
    ball_radius: float
    green_constant: float
    min_u: float
    W_q: np.ndarray = field(repr=False)
    E_q: np.ndarray = field(repr=False)
    records: dict = field(default_factory=dict)

    def u(self, x):
        """u = u_eps + v at points inside the meshed polygon."""
        x = np.atleast_2d(np.asarray(x, float))
        return self.field.value(x) + self.mesh.interpolate(self.v, x)

    def gamma(self, x):
        return gamma(self.mesh, x, self.mesh.rho_min)


def _weighted_sup(mesh, values, delta):
    g = gamma(mesh, mesh.points, mesh.rho_min)
    return float(np.max(g ** (-delta) * np.abs(values)))


def solve_corrector(field_: GluedField, mesh: DiskMesh, quad: Quadrature, solver: DirichletSolver,
                    p: float, delta: float, v0=None, tol: float = 1e-10, max_iter: int = 200):
    """Picard iteration for -Delta v = E + |W + v|^p - W^p; returns (v, ratios, W_q, E_q, steps)."""
    W_q, E_q = field_.evaluate(quad.x)
    v = np.zeros(mesh.n_nodes) if v0 is None else v0.copy()
    ratios, prev = [], None
    base = solver.solve_load(quad.load(mesh, E_q))
    for k in range(1, max_iter + 1):
        vq = quad.interp(mesh, v)
        v_new = base + solver.solve_load(quad.load(mesh, _pow_diff(W_q, vq, p)))
        diff = _weighted_sup(mesh, v_new - v, delta)
        scale = max(_weighted_sup(mesh, v_new, delta), 1e-300)
        if prev is not None and prev > 1e3 * np.finfo(float).eps * scale:
            ratios.append(diff / prev)
        v = v_new
        if not np.isfinite(diff) or (len(ratios) >= 3 and min(ratios[-3:]) >= 1.0):
            raise ContractionError(
                f"corrector iteration does not contract (ratio {ratios[-1]:.3f}); ε is too large"
            )
        if diff <= tol * scale:
            return v, ratios, W_q, E_q, k
        prev = diff
    raise ContractionError(f"corrector iteration did not converge in {max_iter} steps; ε is too large")


def glue_fixed_point(config: GlueConfig, profile: CellProfile, mesh: DiskMesh | None = None,
                     quad: Quadrature | None = None, solver: DirichletSolver | None = None,
                     field_: GluedField | None = None, tol: float = 1e-10) -> GlueSolution:
    """Solve the corrector fixed point for u = u_eps + v on the disk."""
    config.validate()
    if config.domain != "disk":
        raise ConfigError("gluing is implemented on the disk; the ball supports charts and cells only")
    field_ = field_ or build_u_eps(config, profile)
    mesh = mesh or disk_mesh(config.points(), config.h0, config.log_step, config.rho_min)
    quad = quad or mesh_quadrature(mesh)
    solver = solver or DirichletSolver(mesh)
    v, ratios, W_q, E_q, k = solve_corrector(field_, mesh, quad, solver, config.p, config.delta, tol=tol)
    return _finish(config, field_, mesh, quad, solver, v, ratios, W_q, E_q, k)


def _finish(config, field_, mesh, quad, solver, v, ratios, W_q, E_q, k):
    n, delta = config.n, config.delta
    gq = gamma(mesh, quad.x, mesh.rho_min)
    # weighted residual over the resolved region (quadrature points with rho >= rho_min)
    res_sel = gq >= math.sqrt(2) * mesh.rho_min
    f = gq**2 * E_q
    res_norm = float(np.max(gq[res_sel] ** (-delta) * np.abs(f[res_sel])))
    G_f = solver.solve_load(quad.load(mesh, E_q))
    green = _weighted_sup(mesh, G_f, delta) / res_norm if res_norm > 0 else 0.0
    # first iterate G(E) sets the ball: radius 2 c0 (log 1/eps)^{(1-n)/2} = 2 ||G(E)||
    logf = math.log(1 / min(b.eps for b in field_.bumps))
    c0 = _weighted_sup(mesh, G_f, delta) * logf ** ((n - 1) / 2)
    v_norm = _weighted_sup(mesh, v, delta)
    u_nodes = field_.value(mesh.points) + v
    interior = ~mesh.boundary
    min_u = float(np.min(u_nodes[interior]))
    lip = float(ratios[-1]) if ratios else 0.0
    return GlueSolution(config, field_, mesh, quad, v, lip, ratios, k, v_norm, res_norm, c0,
                        2 * green * res_norm, green, min_u, W_q, E_q)


# -- verification ---------------------------------------------------------------

def _monomial(a, b):
    def P(x):
        return x[..., 0] ** a * x[..., 1] ** b

    def grad(x):
        gx = a * x[..., 0] ** max(a - 1, 0) * x[..., 1] ** b if a else np.zeros(x.shape[:-1])
        gy = b * x[..., 0] ** a * x[..., 1] ** max(b - 1, 0) if b else np.zeros(x.shape[:-1])
        return gx, gy

    def lap(x):
        out = np.zeros(x.shape[:-1])
        if a >= 2:
            out = out + a * (a - 1) * x[..., 0] ** (a - 2) * x[..., 1] ** b
        if b >= 2:
            out = out + b * (b - 1) * x[..., 0] ** a * x[..., 1] ** (b - 2)
        return out

    return P, grad, lap


SUITE_EXPONENTS = ((0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (0, 3))


def suite_function(a: int, b: int):
    """(phi, Delta phi) for phi = (1 - |x|^2) x^a y^b, which vanishes on the circle."""
    P, grad, lap = _monomial(a, b)

    def phi(x):
        return (1 - np.sum(x**2, axis=-1)) * P(x)

    def lap_phi(x):
        gx, gy = grad(x)
        return (1 - np.sum(x**2, axis=-1)) * lap(x) - 4 * (x[..., 0] * gx + x[..., 1] * gy) - 4 * P(x)

    return phi, lap_phi


def very_weak_suite():
    """The eight fixed test functions: the first-eigenfunction surrogate 1 - |x|^2 times monomials."""
    return [suite_function(a, b) for a, b in SUITE_EXPONENTS]


@dataclass
class DefectReport:
    defects: np.ndarray
    int_u: float
    int_up_dist: float


def verify_very_weak(sol: GlueSolution, suite=None) -> DefectReport:
    """|int (u Delta phi + u^p phi)| for each test function.

    The cell part is integrated by parts exactly: for the C^2 field W,
    int W Delta phi = int Delta W phi (the flux through a small half circle
    at xi vanishes like (log 1/r)^{-(n-1)/2}), so the integrand becomes
    E phi + v Delta phi + (|W+v|^p - W^p) phi, all absolutely integrable and
    handled by the graded quadrature.
    """
    suite = suite or very_weak_suite()
    q, p = sol.quad, sol.config.p
    vq = q.interp(sol.mesh, sol.v)
    nl = sol.E_q + _pow_diff(sol.W_q, vq, p)
    out = []
    for phi, lap_phi in suite:
        out.append(abs(q.integrate(nl * phi(q.x) + vq * lap_phi(q.x))))
    u_q = sol.W_q + vq
    dist = 1 - np.linalg.norm(q.x, axis=-1)
    return DefectReport(np.array(out), q.integrate(np.abs(u_q)), q.integrate(np.abs(u_q) ** p * dist))


@dataclass
class ProbeReport:
    distances: np.ndarray
    values: np.ndarray
    growth_ratio: float
    monotone: bool
    scaled: np.ndarray


def nontangential_probe(sol: GlueSolution, x0, angle: float = 0.0, distances=None) -> ProbeReport:
    """Sample u along the ray from x0 making ``angle`` with the inner normal."""
    if not abs(angle) < 0.5 * math.pi:
        raise PreconditionError("cone angle must be below π/2")
    x0 = np.asarray(x0, float)
    if abs(np.linalg.norm(x0) - 1) > 1e-9:
        raise PreconditionError("x0 must lie on the boundary")
    distances = np.asarray(distances if distances is not None else 10.0 ** -np.arange(1, 6), float)
    n_in = -x0
    tau = np.array([-x0[1], x0[0]])
    d = math.cos(angle) * n_in + math.sin(angle) * tau
    pts = x0 + distances[:, None] * d
    vals = sol.u(pts)
    n = sol.config.n
    scaled = vals * distances ** (n - 1) * np.log(1 / distances) ** ((n - 1) / 2)
    ratio = float(vals[-1] / vals[0]) if vals[0] != 0 else math.inf
    mono = bool(np.all(np.diff(vals) > 0))
    return ProbeReport(distances, vals, ratio, mono, scaled)


# -- staged construction --------------------------------------------------

@dataclass
class StageRecord:
    stage: int
    point: list
    eps: float
    radius: float
    halvings: int
    l1_increment: float
    power_increment: float
    power_increment_raised: float
    sup_v: float
    lipschitz: float
    passed: bool


def _stage_trial(field_, chart, eps, R_i, profile, mesh, quad, solver, V_prev, centres, config, i, tol):
    p, delta = config.p, config.delta
    bump = Bump(chart, eps, R_i, profile)
    trial = field_.add(bump)
    V, ratios, W_q, E_q, k = solve_corrector(trial, mesh, quad, solver, p, delta, V_prev, tol)
    inc_q = GluedField([bump], p).value(quad.x) + quad.interp(mesh, V - V_prev)
    dist = 1 - np.linalg.norm(quad.x, axis=-1)
    l1 = quad.integrate(np.abs(inc_q))
    pw = quad.integrate(dist**2 * np.abs(inc_q) ** p)
    gt = gamma(centres, mesh.points, 0.0)
    if delta == 0:
        wts = np.ones_like(gt)
    else:
        with np.errstate(divide="ignore"):
            wts = np.where(gt > 0, gt**delta, 0.0)
    sup_v = float(np.max(wts * np.abs(V - V_prev)))
    bound = 2.0**-i
    ok = l1 <= bound and pw**p <= bound and sup_v <= bound
    rec = StageRecord(i, chart.xi.tolist(), eps, R_i, 0, l1, pw, pw**p, sup_v,
                      float(ratios[-1]) if ratios else 0.0, ok)
    return rec, trial, (V, ratios, W_q, E_q, k)


def multi_stage(config: GlueConfig, profile: CellProfile, K: int, max_halvings: int = 2000,
                tol: float = 1e-10):
    """Add one singular point per stage, halving eps_i until the stage bounds hold.

    Stage i (1-based) adds xi_i = config.points()[i-1] with cutoff support
    radius 2R_i = min(2R, d_i / 2), d_i the distance to the earlier points,
    re-solves the corrector with all cells present, and checks, with v_i the
    change of the corrector and u_i - u_{i-1} = (new cell) + v_i:

        ||u_i - u_{i-1}||_{L^1} <= 2^{-i},
        || dist^2 |u_i - u_{i-1}|^p ||_{L^1}^p <= 2^{-i},
        || dist(., S)^delta v_i ||_inf <= 2^{-i}.

    In the critical case the three quantities fall like (log 1/eps)^{-1/2},
    so thousands of halvings may be needed; the smallest passing number of
    halvings is located by doubling and bisection (the quantities decrease
    with the halving count), not by one solve per halving.
    """
    config.validate()
    pts = config.points()
    if K > len(pts):
        raise ConfigError(f"K = {K} stages need {K} singular points, got {len(pts)}")
    pts = pts[:K]
    mesh = disk_mesh(pts, config.h0, config.log_step, config.rho_min)
    quad = mesh_quadrature(mesh)
    solver = DirichletSolver(mesh)
    field_ = GluedField([], config.p)
    V_prev = np.zeros(mesh.n_nodes)
    log, sol = [], None
    for i in range(1, K + 1):
        xi = pts[i - 1]
        d_i = min((np.linalg.norm(xi - q) for q in pts[: i - 1]), default=math.inf)
        R_i = min(config.R, d_i / 4)
        chart = fermi_map(config.domain, xi)
        cache = {}

        def run(h):
            if h not in cache:
                eps = config.eps * 2.0**-h
                try:
                    cache[h] = _stage_trial(field_, chart, eps, R_i, profile, mesh, quad, solver,
                                            V_prev, pts[:i], config, i, tol)
                except ContractionError:
                    cache[h] = None
            return cache[h]

        def ok(h):
            r = run(h)
            return r is not None and r[0].passed

        # smallest eps: representable, and eps * (deepest quadrature radius) inside the profile range
        eps_floor = max(np.finfo(float).tiny, math.exp(-profile.t_max) / quad.rho_min)
        h_cap = min(max_halvings, int(math.floor(math.log2(config.eps / eps_floor))))
        lo, hi = -1, 0
        while not ok(hi):
            if hi >= h_cap:
                raise StageFailure(f"stage {i}: bounds not met down to ε = {config.eps * 2.0**-hi:.3g}")
            lo, hi = hi, min(max(1, 2 * hi), h_cap)
        while hi - lo > 1:
            mid = (lo + hi) // 2
            if ok(mid):
                hi = mid
            else:
                lo = mid
        rec, field_, (V, ratios, W_q, E_q, k) = run(hi)
        rec.halvings = hi
        log.append(rec)
        V_prev = V
        sol = _finish(config, field_, mesh, quad, solver, V, ratios, W_q, E_q, k)
    return sol, log


# -- convenience ----------------------------------------------------------

def critical_profile(N: int = 2, n_modes: int = 12, h_t: float = 0.05, T: float = 400.0) -> CriticalProfile:
    """Spectral critical cell at the automatically chosen t_*, wrapped for gluing."""
    from .critical import auto_t_star, spectral_cell

    sigma = (N - 1) / 2 + 0.25  # inside the window ((N-1)/2, (N+1)/2)
    return CriticalProfile(spectral_cell(auto_t_star(N, sigma=sigma), n_modes, h_t, T))


@dataclass
class RefinementStudy:
    levels: list
    n_nodes: list
    defects: np.ndarray  # (level, test function), signed
    orders: np.ndarray  # two-refinement order per test function
    min_u: list
    solutions: list = field(default_factory=list, repr=False)

    def passed(self, min_order: float = 0.9) -> bool:
        return bool(np.all(self.orders >= min_order))


def refinement_study(config: GlueConfig, profile: CellProfile, levels=(3, 4, 5), keep: bool = False,
                     suite=None) -> RefinementStudy:
    """Very-weak defects of the glued solution on successively halved meshes.

    The order is log2(|D_first| / |D_last|) / (number of halvings) per test
    function: first order convergence means order >= 1 up to noise.
    """
    suite = suite or very_weak_suite()
    rows, nodes, mins, sols = [], [], [], []
    for lev in levels:
        sol = glue_fixed_point(config.refined(lev), profile)
        q = sol.quad
        vq = q.interp(sol.mesh, sol.v)
        nl = sol.E_q + _pow_diff(sol.W_q, vq, config.p)
        rows.append([q.integrate(nl * phi(q.x) + vq * lap(q.x)) for phi, lap in suite])
        nodes.append(sol.mesh.n_nodes)
        mins.append(sol.min_u)
        if keep:
            sols.append(sol)
    D = np.array(rows)
    orders = np.log2(np.abs(D[0]) / np.abs(D[-1])) / (levels[-1] - levels[0])
    return RefinementStudy(list(levels), nodes, D, orders, mins, sols)


def verification_records(sol: GlueSolution, regular_point=None, distances=None) -> dict:
    """Very-weak defects, cone probes and norms, stored in ``sol.records``."""
    distances = np.asarray(distances if distances is not None else 10.0 ** -np.arange(1, 6), float)
    pts = sol.config.points()
    if regular_point is None:
        # boundary point farthest from the singular set
        th = np.linspace(0, 2 * np.pi, 721)[:-1]
        circ = np.column_stack([np.cos(th), np.sin(th)])
        regular_point = circ[np.argmax(gamma(pts, circ, 0.0))]
    rep = verify_very_weak(sol)
    rec = {
        "defects": rep.defects.tolist(),
        "int_u": rep.int_u,
        "int_up_dist": rep.int_up_dist,
        "lipschitz": sol.lipschitz,
        "v_norm": sol.v_norm,
        "ball_radius": sol.ball_radius,
        "residual_norm": sol.residual_norm,
        "c0": sol.c0,
        "min_u": sol.min_u,
        "probes": [],
    }
    for xi in pts:
        pr = nontangential_probe(sol, xi, 0.0, distances)
        rec["probes"].append({"x0": xi.tolist(), "angle": 0.0, "distances": distances.tolist(),
                              "values": pr.values.tolist(), "growth_ratio": pr.growth_ratio,
                              "monotone": pr.monotone, "scaled": pr.scaled.tolist()})
    for ang in (0.0, 0.25 * math.pi):
        pr = nontangential_probe(sol, regular_point, ang, distances)
        rec["probes"].append({"x0": list(map(float, regular_point)), "angle": ang,
                              "distances": distances.tolist(), "values": pr.values.tolist(),
                              "growth_ratio": pr.growth_ratio, "monotone": pr.monotone,
                              "scaled": pr.scaled.tolist()})
    sol.records.update(rec)
    return rec
