"""Axisymmetric, x3-even fields on the unit ball and the ray-preserving deformation.

A field is stored as coefficients of

    f(s, mu) = s**2 * sum_{m, l} a[m, l] * T_m(2 s - 1) * P_{2l}(mu)

with ``s = |x|`` and ``mu = x3 / |x|``.  The ``s**2`` factor forces
``f(0) = 0`` with ``|grad f| = O(|x|)``; even Legendre modes force
axisymmetry and evenness in x3.  The reduced field ``f / s**2`` is a
polynomial, which is what the deformation ``g(x) = x (1 + zeta/|x|^2)``
actually consumes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
from numpy.polynomial import chebyshev as C
from numpy.polynomial import legendre as L

DEFAULT_TRUST_RADIUS = 0.15


class FoldError(ValueError):
    """The deformation is not orientation preserving (det Dg <= 0)."""


class OutsideDeformedBall(ValueError):
    pass


def _even_legvander(mu, nmu):
    return L.legvander(np.asarray(mu, dtype=float), 2 * nmu - 2)[..., ::2]


@dataclass(frozen=True)
class AxiGrid:
    """Collocation nodes plus the quadrature rules used by the integral operators.

    Radial collocation nodes are Chebyshev-Lobatto points of [0, 1] with the
    origin removed; angular nodes are the positive half of a 2*nmu point
    Gauss-Legendre rule.  ``n_rays`` / ``n_radial`` / ``lmax`` control the
    per-ray multipole quadrature of the potentials.
    """

    ns: int = 24
    nmu: int = 12
    n_vol_s: int | None = None
    n_vol_mu: int | None = None
    n_rays: int | None = None
    n_radial: int | None = None
    lmax: int | None = None
    outer_panels: int = 3
    n_panel: int | None = None

    def __post_init__(self):
        if self.ns < 2 or self.nmu < 1:
            raise ValueError("grid too small")
        defaults = {
            "n_vol_s": self.ns + 16,
            "n_vol_mu": self.nmu + 8,
            "n_rays": 2 * self.nmu + 4,
            "n_radial": self.ns + 8,
            "lmax": 2 * self.nmu + 10,
        }
        for k, v in defaults.items():
            if getattr(self, k) is None:
                object.__setattr__(self, k, v)
        if self.n_panel is None:
            object.__setattr__(self, "n_panel", max(self.n_radial // 2, 4))

    # -- collocation ---------------------------------------------------------
    @cached_property
    def s_nodes(self) -> np.ndarray:
        i = np.arange(1, self.ns + 1)
        return 0.5 * (1.0 - np.cos(np.pi * i / self.ns))

    @cached_property
    def mu_nodes(self) -> np.ndarray:
        x, _ = L.leggauss(2 * self.nmu)
        return np.sort(x[x > 0])

    @property
    def size(self) -> int:
        return self.ns * self.nmu

    @cached_property
    def nodes_sm(self):
        """Flattened (s, mu) of the collocation nodes, radial index major."""
        S, M = np.meshgrid(self.s_nodes, self.mu_nodes, indexing="ij")
        return S.ravel(), M.ravel()

    @cached_property
    def nodes_cart(self) -> np.ndarray:
        s, mu = self.nodes_sm
        return np.stack([s * np.sqrt(1 - mu**2), np.zeros_like(s), s * mu], axis=-1)

    @cached_property
    def _radial_vander(self):
        s = self.s_nodes
        return s[:, None] ** 2 * C.chebvander(2 * s - 1, self.ns - 1)

    @cached_property
    def _angular_vander(self):
        return _even_legvander(self.mu_nodes, self.nmu)

    @cached_property
    def _inv_radial(self):
        return np.linalg.inv(self._radial_vander)

    @cached_property
    def _inv_angular(self):
        return np.linalg.inv(self._angular_vander)

    def coefficients_from_nodal(self, values) -> np.ndarray:
        F = np.asarray(values, dtype=float).reshape(self.ns, self.nmu)
        return self._inv_radial @ F @ self._inv_angular.T

    def nodal_from_coefficients(self, coeffs) -> np.ndarray:
        A = np.asarray(coeffs, dtype=float).reshape(self.ns, self.nmu)
        return (self._radial_vander @ A @ self._angular_vander.T).ravel()

    @cached_property
    def nodal_to_coeff_matrix(self) -> np.ndarray:
        """Linear map from flattened nodal values to flattened coefficients."""
        return np.kron(self._inv_radial, self._inv_angular)

    # -- volume quadrature on B1 ---------------------------------------------
    @cached_property
    def volume_quadrature(self):
        """Nodes (s, mu) and weights integrating over the whole unit ball."""
        xs, ws = L.leggauss(self.n_vol_s)
        xm, wm = L.leggauss(self.n_vol_mu)
        s = 0.5 * (xs + 1)
        ws = 0.5 * ws
        mu = 0.5 * (xm + 1)
        wm = 0.5 * wm
        S, M = np.meshgrid(s, mu, indexing="ij")
        W = 4 * np.pi * np.outer(ws * s**2, wm)  # 2*pi azimuth x 2 for the mirrored half
        return S.ravel(), M.ravel(), W.ravel()

    # -- ray quadrature for the potentials ------------------------------------
    @cached_property
    def rays(self):
        """Angular Gauss nodes/weights on [0, 1] used as source rays."""
        x, w = L.leggauss(self.n_rays)
        return 0.5 * (x + 1), 0.5 * w

    @cached_property
    def radial_rule(self):
        x, w = L.leggauss(self.n_radial)
        return 0.5 * (x + 1), 0.5 * w

    @cached_property
    def panel_rule(self):
        x, w = L.leggauss(self.n_panel)
        return 0.5 * (x + 1), 0.5 * w

    def refined(self, factor: int = 2) -> "AxiGrid":
        return AxiGrid(ns=self.ns * factor, nmu=self.nmu)

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("ns", "nmu", "n_vol_s", "n_vol_mu", "n_rays", "n_radial", "lmax",
                 "outer_panels", "n_panel")}


@dataclass(frozen=True, eq=False)
class AxiField:
    """Scalar field in the symmetry class of the space X (see module docstring)."""

    grid: AxiGrid
    coeffs: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).reshape(self.grid.ns, self.grid.nmu)
        object.__setattr__(self, "coeffs", c)

    # -- construction ----------------------------------------------------------
    @classmethod
    def zero(cls, grid):
        return cls(grid, np.zeros((grid.ns, grid.nmu)))

    @classmethod
    def from_nodal(cls, grid, values):
        return cls(grid, grid.coefficients_from_nodal(values))

    @classmethod
    def from_function(cls, grid, fn):
        """Interpolate ``fn(s, mu)`` at the collocation nodes."""
        s, mu = grid.nodes_sm
        return cls.from_nodal(grid, fn(s, mu))

    @classmethod
    def quadratic(cls, grid, c):
        """The field ``c |x|^2``."""
        a = np.zeros((grid.ns, grid.nmu))
        a[0, 0] = c
        return cls(grid, a)

    def nodal(self) -> np.ndarray:
        return self.grid.nodal_from_coefficients(self.coeffs)

    def __add__(self, other):
        return type(self)(self.grid, self.coeffs + other.coeffs)

    def __sub__(self, other):
        return type(self)(self.grid, self.coeffs - other.coeffs)

    def __mul__(self, c):
        return type(self)(self.grid, self.coeffs * c)

    __rmul__ = __mul__

    # -- evaluation ------------------------------------------------------------
    def _tv(self, s, deriv=False):
        x = 2 * np.asarray(s, dtype=float) - 1
        if not deriv:
            return C.chebvander(x, self.grid.ns - 1)
        D = C.chebder(np.eye(self.grid.ns)) * 2.0  # d/ds = 2 d/dx
        return C.chebvander(x, self.grid.ns - 2) @ D

    def _pv(self, mu, deriv=False):
        mu = np.asarray(mu, dtype=float)
        if not deriv:
            return _even_legvander(mu, self.grid.nmu)
        deg = 2 * self.grid.nmu - 2
        if deg == 0:
            return np.zeros(mu.shape + (1,))
        D = L.legder(np.eye(deg + 1))[:, ::2]
        return L.legvander(mu, deg - 1) @ D

    def reduced(self, s, mu, ds=False, dmu=False):
        """``p = f / s**2`` or one of its partial derivatives."""
        s, mu = np.broadcast_arrays(np.asarray(s, float), np.asarray(mu, float))
        T = self._tv(s, ds)
        P = self._pv(mu, dmu)
        return np.sum((T @ self.coeffs) * P, axis=-1).reshape(s.shape)

    def __call__(self, s, mu):
        return np.asarray(s) ** 2 * self.reduced(s, mu)

    def ds(self, s, mu):
        s = np.asarray(s, float)
        return 2 * s * self.reduced(s, mu) + s**2 * self.reduced(s, mu, ds=True)

    def dmu(self, s, mu):
        return np.asarray(s, float) ** 2 * self.reduced(s, mu, dmu=True)

    def grad_norm(self, s, mu):
        """|grad f| from the spherical partials."""
        s = np.asarray(s, float)
        mu = np.asarray(mu, float)
        fs = self.ds(s, mu)
        fm = self.dmu(s, mu)
        with np.errstate(divide="ignore", invalid="ignore"):
            ang = np.where(s > 0, (1 - mu**2) * fm**2 / np.where(s > 0, s, 1) ** 2, 0.0)
        return np.sqrt(fs**2 + ang)

    def at_cartesian(self, x):
        s, mu = cart_to_sm(x)
        return self(s, mu)

    def grad_cartesian(self, x):
        x = np.asarray(x, float)
        s, mu = cart_to_sm(x)
        fs = self.ds(s, mu)
        fm = self.dmu(s, mu)
        return _sph_grad_to_cart(x, s, mu, fs, fm)

    def reduced_grad_cartesian(self, x):
        """Gradient of ``f / |x|^2`` in Cartesian components."""
        x = np.asarray(x, float)
        s, mu = cart_to_sm(x)
        ps = self.reduced(s, mu, ds=True)
        pm = self.reduced(s, mu, dmu=True)
        return _sph_grad_to_cart(x, s, mu, ps, pm)

    def ray_coefficients(self, mu) -> np.ndarray:
        """Chebyshev coefficients (in 2s-1) of the reduced field along each ray ``mu``."""
        return self._pv(np.asarray(mu, float)) @ self.coeffs.T

    # -- serialization ---------------------------------------------------------
    def to_dict(self) -> dict:
        return {
            "l_modes": [2 * l for l in range(self.grid.nmu)],
            "radial_degree": self.grid.ns - 1,
            "coefficients": self.coeffs.ravel().tolist(),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, grid, d):
        if d["radial_degree"] != grid.ns - 1 or len(d["l_modes"]) != grid.nmu:
            raise ValueError("coefficient layout does not match the grid")
        return cls(grid, np.array(d["coefficients"], float))


class DeformationField(AxiField):
    """The deformation scalar zeta."""


class MagneticPotentialField(AxiField):
    """phi = psi o g_zeta, the pulled-back magnetic potential."""


def cart_to_sm(x):
    x = np.asarray(x, float)
    s = np.linalg.norm(x, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(s > 0, x[..., 2] / np.where(s > 0, s, 1.0), 1.0)
    return s, mu


def _sph_grad_to_cart(x, s, mu, fs, fm):
    # d mu / d x_i = delta_i3 / s - x3 x_i / s^3
    safe = np.where(s > 0, s, 1.0)
    er = x / safe[..., None]
    dmu = -mu[..., None] * x / safe[..., None] ** 2
    dmu[..., 2] += 1.0 / safe
    g = fs[..., None] * er + fm[..., None] * dmu
    return np.where((s > 0)[..., None], g, 0.0)


# --------------------------------------------------------------------------
# Deformation map


def stretch(zeta: AxiField, s, mu):
    """Radial scale factor ``1 + zeta/|x|^2`` at (s, mu)."""
    return 1.0 + zeta.reduced(s, mu)


def deformed_radius(zeta: AxiField, s, mu):
    return np.asarray(s, float) * stretch(zeta, s, mu)


def g_apply(zeta: AxiField, x):
    """``g(x) = x (1 + zeta(x)/|x|^2)``; the origin is fixed."""
    x = np.asarray(x, float)
    s, mu = cart_to_sm(x)
    return x * stretch(zeta, s, mu)[..., None]


def g_jacobian(zeta: AxiField, x, check=True):
    """``Dg = (1 + p) I + x (grad p)^T`` with ``p = zeta/|x|^2``; returns (matrix, det)."""
    x = np.asarray(x, float)
    s, mu = cart_to_sm(x)
    p = zeta.reduced(s, mu)
    gp = zeta.reduced_grad_cartesian(x)
    D = (1 + p)[..., None, None] * np.eye(3) + x[..., :, None] * gp[..., None, :]
    det = np.linalg.det(D)
    if check and np.any(det <= 0):
        raise FoldError("det Dg <= 0: deformation folds")
    return D, det


def jacobian_det(zeta: AxiField, s, mu, dim: int = 3):
    """det of the 3D (or 5D extended) deformation: ``(1+p)^(dim-1) (1 + p + s p_s)``."""
    s = np.asarray(s, float)
    p = zeta.reduced(s, mu)
    ps = zeta.reduced(s, mu, ds=True)
    return (1 + p) ** (dim - 1) * (1 + p + s * ps)


def g_inverse(zeta: AxiField, z, delta: float = DEFAULT_TRUST_RADIUS, tol=1e-14, maxiter=100):
    """Invert g along rays: find t in [0, 1 + delta] with ``t (1 + p(t, mu)) = |z|``."""
    z = np.asarray(z, float)
    R, mu = cart_to_sm(z)
    t = ray_preimage(zeta, R, mu, smax=1.0 + delta, tol=tol, maxiter=maxiter)
    if np.any(np.isnan(t)):
        raise OutsideDeformedBall("point outside g(B_{1+delta})")
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(R > 0, t / np.where(R > 0, R, 1.0), 0.0)
    return z * scale[..., None]


def ray_preimage(zeta: AxiField, R, mu, smax=1.0, tol=1e-14, maxiter=100, clip=False):
    """Solve ``s (1 + p(s, mu)) = R`` for s in [0, smax] by safeguarded Newton.

    With ``clip`` set, radii beyond the end of the ray map to ``smax``;
    otherwise they are returned as NaN.
    """
    R, mu = np.broadcast_arrays(np.asarray(R, float), np.asarray(mu, float))
    R = R.copy()
    lo = np.zeros_like(R)
    hi = np.full_like(R, smax)
    Rmax = deformed_radius(zeta, hi, mu)
    beyond = R > Rmax * (1 + 1e-15)
    Rt = np.where(beyond, Rmax, R)
    scale = 1.0 + zeta.reduced(np.clip(Rt, 0, smax), mu)
    t = np.clip(Rt / scale, 0.0, smax)
    for _ in range(maxiter):
        p = zeta.reduced(t, mu)
        ps = zeta.reduced(t, mu, ds=True)
        f = t * (1 + p) - Rt
        lo = np.where(f < 0, t, lo)
        hi = np.where(f > 0, t, hi)
        dt = f / (1 + p + t * ps)
        tn = t - dt
        bad = (tn <= lo) | (tn >= hi)
        tn = np.where(bad, 0.5 * (lo + hi), tn)
        if np.all(np.abs(tn - t) <= tol * np.maximum(1.0, np.abs(t))):
            t = tn
            break
        t = tn
    if clip:
        return np.where(beyond, smax, t)
    return np.where(beyond, np.nan, t)


def x_norm(f: AxiField, ns: int | None = None, nmu: int | None = None) -> float:
    """Grid surrogate for ``sup |grad f(x)| / |x|``.

    Sampled on Chebyshev-Lobatto radii (origin excluded) times
    Chebyshev-Lobatto cosines in [0, 1]; both families are nested under
    doubling, so the value is nondecreasing under refinement.
    """
    ns = ns or f.grid.ns
    nmu = nmu or 2 * f.grid.nmu
    i = np.arange(1, ns + 1)
    s = 0.5 * (1 - np.cos(np.pi * i / ns))
    j = np.arange(nmu + 1)
    mu = np.cos(np.pi * j / (2 * nmu))
    S, M = np.meshgrid(s, mu, indexing="ij")
    return float(np.max(f.grad_norm(S, M) / S))


def tilde5(f: AxiField, q, y5, as_map: bool = False):
    """Five-dimensional extension, identifying (4D radius q, y5) with (r, x3).

    For a deformation field with ``as_map`` set, returns the radial scale
    factor ``1 + zeta~/(q^2 + y5^2)`` of the extended map instead.
    """
    q = np.asarray(q, float)
    y5 = np.asarray(y5, float)
    s = np.hypot(q, y5)
    with np.errstate(invalid="ignore", divide="ignore"):
        mu = np.where(s > 0, y5 / np.where(s > 0, s, 1.0), 1.0)
    if as_map:
        return stretch(f, s, mu)
    return f(s, mu)


# --------------------------------------------------------------------------
# Mass normalization


def background_mass(profile, grid: AxiGrid) -> float:
    """Quadrature of rho0 over B1 with the grid's volume rule."""
    s, mu, w = grid.volume_quadrature
    return float(np.sum(w * profile.density(s)))


def _deformed_mass_integral(zeta, profile):
    s, mu, w = zeta.grid.volume_quadrature
    det = jacobian_det(zeta, s, mu)
    if np.any(det <= 0):
        raise FoldError("det Dg <= 0 on the volume quadrature")
    return float(np.sum(w * profile.density(s) * det))


def mass_factor(zeta: AxiField, profile, target_mass: float | None = None) -> float:
    """``M(zeta) = M0 / int_B1 rho0 det Dg``.

    ``target_mass`` defaults to the background mass on the same quadrature,
    so that ``M(0) = 1`` and the deformed star has the background mass
    exactly at the discrete level.
    """
    if target_mass is None:
        target_mass = background_mass(profile, zeta.grid)
    I = _deformed_mass_integral(zeta, profile)
    if I <= 0:
        raise FoldError("nonpositive deformed mass integral")
    return target_mass / I


def _frame_matrices(zeta, xi, s, mu):
    """Dg and D(xi x/|x|^2) in the orthonormal frame (e_s, e_theta, e_phi)."""
    p = zeta.reduced(s, mu)
    ps = zeta.reduced(s, mu, ds=True)
    pm = zeta.reduced(s, mu, dmu=True)
    q = xi.reduced(s, mu)
    qs = xi.reduced(s, mu, ds=True)
    qm = xi.reduced(s, mu, dmu=True)
    sin = np.sqrt(np.clip(1 - mu**2, 0, None))
    shape = np.shape(s) + (3, 3)
    Dg = np.zeros(shape)
    Dg[..., 0, 0] = 1 + p + s * ps
    Dg[..., 0, 1] = -sin * pm  # (1/s) d_theta of s(1+p), d_theta = -sin d_mu
    Dg[..., 1, 1] = 1 + p
    Dg[..., 2, 2] = 1 + p
    DV = np.zeros(shape)
    DV[..., 0, 0] = q + s * qs
    DV[..., 0, 1] = -sin * qm
    DV[..., 1, 1] = q
    DV[..., 2, 2] = q
    return Dg, DV


def mass_factor_derivative(zeta: AxiField, xi: AxiField, profile,
                           target_mass: float | None = None) -> float:
    """Directional derivative ``M'(zeta) xi`` from the trace formula.

    ``-M0 / I^2 * int rho0 det Dg tr[(Dg)^-1 D(xi x/|x|^2)]`` with
    ``I = int rho0 det Dg``.
    """
    if target_mass is None:
        target_mass = background_mass(profile, zeta.grid)
    s, mu, w = zeta.grid.volume_quadrature
    Dg, DV = _frame_matrices(zeta, xi, s, mu)
    det = np.linalg.det(Dg)
    tr = np.trace(np.linalg.solve(Dg, DV), axis1=-2, axis2=-1)
    rho = profile.density(s)
    I = np.sum(w * rho * det)
    return float(-target_mass / I**2 * np.sum(w * rho * det * tr))


def mass_factor_gradient(zeta: AxiField, profile, target_mass: float | None = None):
    """Row vector of ``M'(zeta)`` acting on nodal values of the direction field."""
    grid = zeta.grid
    if target_mass is None:
        target_mass = background_mass(profile, grid)
    s, mu, w = grid.volume_quadrature
    p = zeta.reduced(s, mu)
    ps = zeta.reduced(s, mu, ds=True)
    ws_ = 1 + p + s * ps
    det = (1 + p) ** 2 * ws_
    rho = profile.density(s)
    I = np.sum(w * rho * det)
    # Dg is upper triangular in the spherical frame, so the trace reduces to
    # (q + s q_s)/w_s + 2 q/(1+p) for the reduced direction q = xi/s^2
    basis = _basis_values(grid, s, mu)
    basis_s = _basis_values(grid, s, mu, ds=True)
    tr = (basis + s[:, None] * basis_s) / ws_[:, None] + 2 * basis / (1 + p)[:, None]
    row = -target_mass / I**2 * ((w * rho * det) @ tr)
    return row @ grid.nodal_to_coeff_matrix


def _basis_values(grid, s, mu, ds=False):
    """Reduced basis functions T_m(2s-1) P_2l(mu) (or their s-derivative) at points."""
    tmp = AxiField.zero(grid)
    T = tmp._tv(s, ds)
    P = tmp._pv(mu)
    return (T[:, :, None] * P[:, None, :]).reshape(len(s), -1)
