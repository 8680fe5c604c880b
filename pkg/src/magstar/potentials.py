"""Newtonian potential and the inverse of ``L = div(r^-2 grad)`` for deformed sources.

Both operators act on sources given in pulled-back form: a callable
``f(s, mu)`` on the undeformed ball whose physical counterpart is
``f o g^-1`` on the deformed star.  Integrals are taken over the
undeformed ball with the Jacobian of g (or of its 5D extension).

Production evaluation uses exact zonal expansions of the kernels:

* 3D:  ``1/|x-y| = sum_l r<^l / r>^(l+1) P_l(cos gamma)``
* 5D:  ``1/|X-Y|^3 = sum_l r<^l / r>^(l+3) C_l^(3/2)(cos gamma)``

Because g preserves rays, a source point keeps its direction and only its
radius changes; along each source ray the radial integral is split where
the deformed radius crosses the target radius, so every piece is smooth
and Gauss rules converge spectrally.  Direct kernel quadrature (ring kernel
through complete elliptic integrals, and the 3-sphere kernel K5) is kept
as an independent cross-check.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial import legendre as Leg
from scipy import integrate, sparse
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import spsolve

from .geometry import AxiField, AxiGrid, FoldError, jacobian_det, ray_preimage

C5 = -1.0 / (8.0 * math.pi**2)
"""Normalization of the 5D fundamental solution: Delta_5 (C5 |x|^-3) = delta."""

_TARGET_CHUNK = 96


# --------------------------------------------------------------------------
# complete elliptic integrals


def _agm_run(m, tol=1e-15, maxiter=40):
    m = np.asarray(m, float)
    if np.any((m < 0) | (m >= 1)):
        raise ValueError("elliptic modulus parameter must satisfy 0 <= m < 1")
    a = np.ones_like(m)
    b = np.sqrt(1.0 - m)
    c = np.sqrt(m)
    csum = 0.5 * c**2
    p2 = 0.5
    it = np.zeros(m.shape, int)
    for _ in range(maxiter):
        active = np.abs(a - b) > tol * a
        if not np.any(active):
            break
        it += active
        a, b, c = 0.5 * (a + b), np.sqrt(a * b), 0.5 * (a - b)
        p2 *= 2
        csum = csum + p2 * c**2
    return a, csum, it


def elliptic_K(m):
    """Complete elliptic integral of the first kind, ``K(m) = pi / (2 AGM(1, sqrt(1-m)))``."""
    a, _, _ = _agm_run(m)
    out = np.pi / (2 * a)
    return float(out) if np.ndim(out) == 0 else out


def elliptic_E(m):
    """Complete elliptic integral of the second kind via the AGM sum of c_n^2."""
    a, csum, _ = _agm_run(m)
    out = np.pi / (2 * a) * (1 - csum)
    return float(out) if np.ndim(out) == 0 else out


def agm_iterations(m):
    """Number of AGM steps taken to converge (diagnostic)."""
    return _agm_run(m)[2]


def ring_kernel(p, q, dz):
    """``int_0^2pi dphi / |x - y|`` for cylindrical radii p, q and axial offset dz."""
    p, q, dz = np.broadcast_arrays(*(np.asarray(v, float) for v in (p, q, dz)))
    d2 = (p + q) ** 2 + dz**2
    m = 4 * p * q / d2
    return 4 * elliptic_K(np.minimum(m, 1 - 1e-16)) / np.sqrt(d2)


def linv_kernel(p, q, dz, epsrel=1e-11):
    """Integral of ``|X - Y|^-3`` over the 3-sphere orbit of a 5D source point.

    ``K5 = int_0^pi 4 pi sin^2(a) da / (p^2 + q^2 - 2 p q cos a + dz^2)^(3/2)``
    evaluated by adaptive quadrature.
    """
    a2 = p * p + q * q + dz * dz
    if a2 == 0 or (abs(p - q) < 1e-300 and dz == 0):
        raise ZeroDivisionError("coincident source and target")
    val, _ = integrate.quad(
        lambda a: 4 * np.pi * np.sin(a) ** 2 / (a2 - 2 * p * q * np.cos(a)) ** 1.5,
        0.0, np.pi, epsabs=0.0, epsrel=epsrel, limit=200)
    return val


def k5_closed(p, q, dz):
    """Vectorized K5 through elliptic integrals; series fallback for small pq."""
    p, q, dz = np.broadcast_arrays(*(np.asarray(v, float) for v in (p, q, dz)))
    a = p * p + q * q + dz * dz
    b = 2 * p * q
    out = np.empty_like(a)
    small = b < 1e-3 * a
    # int_0^pi sin^2 (a - b cos)^-3/2 = (2/b^2) [2 a K/sqrt(a+b) - 2 sqrt(a+b) E], m = 2b/(a+b)
    big = ~small
    if np.any(big):
        ab = a[big] + b[big]
        m = 2 * b[big] / ab
        K = elliptic_K(np.minimum(m, 1 - 1e-16))
        E = elliptic_E(np.minimum(m, 1 - 1e-16))
        I = 2 / b[big] ** 2 * (2 * a[big] * K / np.sqrt(ab) - 2 * np.sqrt(ab) * E)
        out[big] = 4 * np.pi * I
    if np.any(small):
        # expand in t = b/a: int sin^2 (1 - t cos)^-3/2 = pi/2 (1 + 15/32 t^2 + 315/1024 t^4 + ...)
        t = b[small] / a[small]
        series = 1 + 15 / 32 * t**2 + 315 / 1024 * t**4 + 45045 / 196608 * t**6
        out[small] = 4 * np.pi * (np.pi / 2) * series / a[small] ** 1.5
    return out


# --------------------------------------------------------------------------
# zonal tables


def _zonal_tables(mu, lmax, dim, deriv=False):
    """Angular factors for even l <= lmax.

    dim 3: P_l(mu).  dim 5: C_l^(3/2)(mu) = P'_{l+1}(mu).
    Returns values (and mu-derivatives) with shape (..., nl).
    """
    mu = np.asarray(mu, float)
    ls = np.arange(0, lmax + 1, 2)
    if dim == 3:
        V = Leg.legvander(mu, lmax)
        vals = V[..., ls]
        if not deriv:
            return vals
        D = Leg.legder(np.eye(lmax + 1))
        dvals = (Leg.legvander(mu, lmax - 1) @ D)[..., ls] if lmax > 0 else np.zeros_like(vals)
        return vals, dvals
    D1 = Leg.legder(np.eye(lmax + 2))  # coefficients of P'_j, degree lmax
    vals = (Leg.legvander(mu, lmax) @ D1)[..., ls + 1]
    if not deriv:
        return vals
    D2 = Leg.legder(np.eye(lmax + 2), 2)
    dvals = (Leg.legvander(mu, lmax - 1) @ D2)[..., ls + 1]
    return vals, dvals


def _gegenbauer_at_one(ls):
    return (ls + 1) * (ls + 2) / 2.0


# --------------------------------------------------------------------------
# ray quadrature


@dataclass
class RayQuadrature:
    """Split Gauss rules along each source ray for a batch of targets.

    Arrays have shape (targets, rays, nodes).  ``S`` holds undeformed source
    radii, ``W`` the radial weights (angular weights are ``wk``), ``w`` the
    deformed radii and ``w_s`` their s-derivative.
    """

    R: np.ndarray
    mu_t: np.ndarray
    mu_k: np.ndarray
    wk: np.ndarray
    S: np.ndarray
    W: np.ndarray
    p: np.ndarray
    ps: np.ndarray

    @property
    def w(self):
        return self.S * (1 + self.p)

    @property
    def w_s(self):
        return 1 + self.p + self.S * self.ps

    def det(self, dim):
        return (1 + self.p) ** (dim - 1) * self.w_s


def ray_values(field: AxiField, S, mu_k, ds=False):
    """Evaluate the reduced field on ray nodes ``S[..., k, :]`` along directions ``mu_k``."""
    from numpy.polynomial import chebyshev as Ch

    ck = field.ray_coefficients(mu_k)
    out = np.empty_like(S)
    for k in range(len(mu_k)):
        c = ck[k]
        if ds:
            c = 2 * Ch.chebder(c) if len(c) > 1 else np.zeros(1)
        out[..., k, :] = Ch.chebval(2 * S[..., k, :] - 1, c)
    return out


def build_ray_quadrature(zeta: AxiField, R, mu_t, grid: AxiGrid | None = None,
                         support_radius: float = 1.0) -> RayQuadrature:
    grid = grid or zeta.grid
    R = np.asarray(R, float)
    mu_t = np.asarray(mu_t, float)
    mu_k, wk = grid.rays
    xq, wq = grid.radial_rule
    sstar = ray_preimage(zeta, R[:, None], mu_k[None, :], smax=support_radius, clip=True)
    # the truncated zonal series varies on the scale of the target radius, so
    # the outer piece is cut into panels growing geometrically from s*
    P = grid.outer_panels
    lo = np.maximum(sstar, 1e-3 * support_radius)
    ratio = (support_radius / lo) ** (1.0 / P)
    breaks = [sstar] + [lo * ratio**i for i in range(1, P)] + [np.full_like(sstar, support_radius)]
    breaks = [np.maximum(b, sstar) for b in breaks]
    xp, wp = grid.panel_rule
    S_parts = [sstar[..., None] * xq]
    W_parts = [sstar[..., None] * wq]
    for a, b in zip(breaks[:-1], breaks[1:]):
        S_parts.append(a[..., None] + (b - a)[..., None] * xp)
        W_parts.append((b - a)[..., None] * wp)
    S = np.concatenate(S_parts, axis=-1)
    W = np.concatenate(W_parts, axis=-1)
    p = ray_values(zeta, S, mu_k)
    ps = ray_values(zeta, S, mu_k, ds=True)
    if np.any(1 + p + S * ps <= 0) or np.any(1 + p <= 0):
        raise FoldError("deformation folds on the ray quadrature")
    return RayQuadrature(R, mu_t, mu_k, wk, S, W, p, ps)


def kernel_sums(rq: RayQuadrature, lmax: int, dim: int, derivs=()):
    """Zonal sums ``sum_l A_l(mu_t) B_l(mu_k) K_l(R, w)`` on the ray nodes.

    ``derivs`` may contain ``"w"`` (source radius), ``"R"`` (target radius)
    and ``"mu"`` (target direction cosine).
    """
    e = 1 if dim == 3 else 3
    ls = np.arange(0, lmax + 1, 2)
    if "mu" in derivs:
        A, dA = _zonal_tables(rq.mu_t, lmax, dim, deriv=True)
    else:
        A = _zonal_tables(rq.mu_t, lmax, dim)
    B = _zonal_tables(rq.mu_k, lmax, dim)
    if dim == 5:
        norm = _gegenbauer_at_one(ls)
        A = A / norm
        if "mu" in derivs:
            dA = dA / norm
        B = B * (1 - rq.mu_k[:, None] ** 2)
    AB = A[:, None, :] * B[None, :, :]  # (T, K, nl)
    if "mu" in derivs:
        dAB = dA[:, None, :] * B[None, :, :]
    w = rq.w
    R = rq.R[:, None, None]
    mx = np.maximum(w, R)
    x2 = (np.minimum(w, R) / mx) ** 2
    xl = mx ** (-e)
    val = np.zeros_like(w)
    lsum = np.zeros_like(w) if ("w" in derivs or "R" in derivs) else None
    dmu = np.zeros_like(w) if "mu" in derivs else None
    for i, l in enumerate(ls):
        term = AB[:, :, i, None] * xl
        val += term
        if lsum is not None and l:
            lsum += l * term
        if dmu is not None:
            dmu += dAB[:, :, i, None] * xl
        xl *= x2
    out = {"val": val}
    # d/dw of x^l / mx^e is l/w (inner) or -(l+e)/w (outer); d/dR the reverse
    if "w" in derivs:
        outer = w >= R
        out["w"] = (lsum - outer * (2 * lsum + e * val)) / w
    if "R" in derivs:
        inner = w < R
        with np.errstate(divide="ignore", invalid="ignore"):
            dR = (lsum - inner * (2 * lsum + e * val)) / np.where(R > 0, R, 1.0)
        out["R"] = np.where(R > 0, dR, 0.0)
    if dmu is not None:
        out["mu"] = dmu
    return out


def source_weights(rq: RayQuadrature, dim: int):
    """Prefactor x angular weight x radial weight x pulled-back volume element."""
    pref = 4 * np.pi if dim == 3 else 4 * np.pi**2
    return pref * rq.wk[None, :, None] * rq.W * rq.S ** (dim - 1) * rq.det(dim)


# --------------------------------------------------------------------------
# targets


def _targets_to_RM(targets):
    z = np.atleast_2d(np.asarray(targets, float))
    R = np.linalg.norm(z, axis=-1)
    with np.errstate(divide="ignore", invalid="ignore"):
        mu = np.where(R > 0, z[:, 2] / np.where(R > 0, R, 1.0), 1.0)
    return z, R, mu


def _sph_to_cart_grad(z, R, mu, dR, dmu):
    """Combine d/dR and d/dmu of an axisymmetric function into Cartesian components."""
    r = np.hypot(z[:, 0], z[:, 1])
    sin = np.sqrt(np.clip(1 - mu**2, 0, None))
    with np.errstate(divide="ignore", invalid="ignore"):
        dmu_over_R = np.where(R > 0, dmu / np.where(R > 0, R, 1.0), 0.0)
        # d/dr = sin d/dR - (mu sin / R) d/dmu ;  d/dz = mu d/dR + (sin^2 / R) d/dmu
        g_r = sin * dR - mu * sin * dmu_over_R
        g_z = mu * dR + sin**2 * dmu_over_R
        cphi = np.where(r > 0, z[:, 0] / np.where(r > 0, r, 1.0), 1.0)
        sphi = np.where(r > 0, z[:, 1] / np.where(r > 0, r, 1.0), 0.0)
    return np.stack([g_r * cphi, g_r * sphi, g_z], axis=-1)


def _zero_zeta(grid):
    return AxiField.zero(grid)


def _evaluate(source, zeta, targets, grid, dim, gradient, support_radius):
    z, R, mu = _targets_to_RM(targets)
    val = np.empty(len(R))
    dR = np.empty(len(R))
    dmu = np.empty(len(R))
    derivs = ("R", "mu") if gradient else ()
    for lo in range(0, len(R), _TARGET_CHUNK):
        sl = slice(lo, lo + _TARGET_CHUNK)
        rq = build_ray_quadrature(zeta, R[sl], mu[sl], grid, support_radius)
        ks = kernel_sums(rq, grid.lmax, dim, derivs)
        mu_k = np.broadcast_to(rq.mu_k[None, :, None], rq.S.shape)
        q = source_weights(rq, dim) * source(rq.S, mu_k)
        val[sl] = np.einsum("tkq,tkq->t", ks["val"], q)
        if gradient:
            dR[sl] = np.einsum("tkq,tkq->t", ks["R"], q)
            dmu[sl] = np.einsum("tkq,tkq->t", ks["mu"], q)
    if not gradient:
        return val
    return val, dR, dmu, (z, R, mu)


# --------------------------------------------------------------------------
# public operators


def newtonian_potential(density, zeta: AxiField | None, targets, grid: AxiGrid | None = None,
                        gradient: bool = False, method: str = "multipole",
                        support_radius: float = 1.0):
    """``U(z) = int_B1 rho(y) det Dg(y) / |z - g(y)| dy``.

    ``density(s, mu)`` is the physical density pulled back to the undeformed
    ball (``rho o g``, e.g. ``M(zeta) rho0(s)``); targets are Cartesian points.
    With ``gradient`` set, also returns the Cartesian gradient of U.
    """
    grid = grid or (zeta.grid if zeta is not None else AxiGrid())
    zeta = zeta if zeta is not None else _zero_zeta(grid)
    if method == "kernel":
        if gradient:
            raise NotImplementedError("kernel route evaluates values only")
        return _newtonian_kernel_route(density, zeta, targets, grid, support_radius)
    if not gradient:
        return _evaluate(density, zeta, targets, grid, 3, False, support_radius)
    val, dR, dmu, (z, R, mu) = _evaluate(density, zeta, targets, grid, 3, True, support_radius)
    return val, _sph_to_cart_grad(z, R, mu, dR, dmu)


def linv_apply(source, zeta: AxiField | None, targets, grid: AxiGrid | None = None,
               support_radius: float = 1.0, method: str = "multipole"):
    """``L^-1 [source o g^-1]`` at Cartesian targets.

    ``C5 (z1^2 + z2^2) int |Z - g~(y)|^-3 source~(y) det Dg~(y) dy`` over the
    5D extension of the ball, with ``Z = (z1, z2, 0, 0, z3)``.
    """
    grid = grid or (zeta.grid if zeta is not None else AxiGrid())
    zeta = zeta if zeta is not None else _zero_zeta(grid)
    if method == "kernel":
        return _linv_kernel_route(source, zeta, targets, grid, support_radius)
    z, R, mu = _targets_to_RM(targets)
    L1 = _evaluate(source, zeta, z, grid, 5, False, support_radius)
    r2 = z[:, 0] ** 2 + z[:, 1] ** 2
    return C5 * r2 * L1


def linv_gradient(source, zeta: AxiField | None, targets, grid: AxiGrid | None = None,
                  support_radius: float = 1.0, return_value: bool = False):
    """Gradient of ``L^-1`` by the product rule ``C5 [grad(r^2) L1 + r^2 grad L1]``."""
    grid = grid or (zeta.grid if zeta is not None else AxiGrid())
    zeta = zeta if zeta is not None else _zero_zeta(grid)
    L1, dR, dmu, (z, R, mu) = _evaluate(source, zeta, targets, grid, 5, True, support_radius)
    gL1 = _sph_to_cart_grad(z, R, mu, dR, dmu)
    r2 = z[:, 0] ** 2 + z[:, 1] ** 2
    grad_r2 = np.stack([2 * z[:, 0], 2 * z[:, 1], np.zeros(len(z))], axis=-1)
    g = C5 * (grad_r2 * L1[:, None] + r2[:, None] * gL1)
    if return_value:
        return C5 * r2 * L1, g
    return g


# --------------------------------------------------------------------------
# direct kernel quadrature (cross-check)


def _graded(a, b, n, toward):
    """Gauss nodes on [a, b] clustered cubically toward the end ``toward``."""
    x, w = Leg.leggauss(n)
    u = 0.5 * (x + 1)
    wu = 0.5 * w
    if b <= a:
        return np.zeros(0), np.zeros(0)
    L_ = b - a
    if toward == "a":
        return a + L_ * u**3, L_ * 3 * u**2 * wu
    return b - L_ * u**3, L_ * 3 * u**2 * wu


def _meridional_rule(zeta, R_t, mu_t, n=40, support_radius=1.0):
    """Nodes (s, mu') and weights on [0,1]x[0,1] graded toward the target's preimage."""
    s_list, m_list, w_list = [], [], []
    for ma, mb, tow in ((0.0, mu_t, "b"), (mu_t, 1.0, "a")):
        mus, wms = _graded(ma, mb, n, tow)
        for mu_k, wmk in zip(mus, wms):
            sstar = float(ray_preimage(zeta, np.array([R_t]), np.array([mu_k]),
                                       smax=support_radius, clip=True)[0])
            for sa, sb, stow in ((0.0, sstar, "b"), (sstar, support_radius, "a")):
                ss, ws = _graded(sa, sb, n, stow)
                s_list.append(ss)
                m_list.append(np.full_like(ss, mu_k))
                w_list.append(ws * wmk)
    return np.concatenate(s_list), np.concatenate(m_list), np.concatenate(w_list)


def _newtonian_kernel_route(density, zeta, targets, grid, support_radius=1.0):
    z, R, mu = _targets_to_RM(targets)
    mu = np.abs(mu)  # both kernels include the mirror image
    out = np.empty(len(R))
    for i in range(len(R)):
        s, m, w = _meridional_rule(zeta, R[i], mu[i], support_radius=support_radius)
        wr = s * (1 + zeta.reduced(s, m))
        det = jacobian_det(zeta, s, m)
        q = wr * np.sqrt(1 - m**2)
        y3 = wr * m
        p_t = R[i] * math.sqrt(max(1 - mu[i] ** 2, 0.0))
        z_t = R[i] * mu[i]
        ker = ring_kernel(p_t, q, z_t - y3) + ring_kernel(p_t, q, z_t + y3)
        out[i] = np.sum(w * s**2 * det * density(s, m) * ker)
    return out


def _linv_kernel_route(source, zeta, targets, grid, support_radius=1.0):
    z, R, mu = _targets_to_RM(targets)
    mu = np.abs(mu)  # both kernels include the mirror image
    out = np.empty(len(R))
    for i in range(len(R)):
        s, m, w = _meridional_rule(zeta, R[i], mu[i], support_radius=support_radius)
        wr = s * (1 + zeta.reduced(s, m))
        det5 = jacobian_det(zeta, s, m, dim=5)
        q = wr * np.sqrt(1 - m**2)
        y5 = wr * m
        p_t = R[i] * math.sqrt(max(1 - mu[i] ** 2, 0.0))
        z_t = R[i] * mu[i]
        ker = k5_closed(p_t, q, z_t - y5) + k5_closed(p_t, q, z_t + y5)
        out[i] = C5 * p_t**2 * np.sum(w * s**4 * (1 - m**2) * det5 * source(s, m) * ker)
    return out


# --------------------------------------------------------------------------
# finite-difference oracle for L^-1


@dataclass
class ScalarFieldAxi:
    """Axisymmetric field sampled on a uniform (r, z >= 0) grid, even in z."""

    r: np.ndarray
    z: np.ndarray
    values: np.ndarray

    def __call__(self, r, z):
        interp = RegularGridInterpolator((self.r, self.z), self.values, method="cubic")
        pts = np.stack(np.broadcast_arrays(np.asarray(r, float), np.abs(np.asarray(z, float))), -1)
        return interp(pts)

    @property
    def spacing(self):
        return float(self.r[1] - self.r[0])


def _five_d_monopole(source, support_radius, n=200):
    x, w = Leg.leggauss(n)
    s = 0.5 * support_radius * (x + 1)
    ws = 0.5 * support_radius * w
    xm, wm = Leg.leggauss(64)
    mu = 0.5 * (xm + 1)
    wmu = 0.5 * wm
    S, M = np.meshgrid(s, mu, indexing="ij")
    vals = source(S * np.sqrt(1 - M**2), S * M)
    return 4 * np.pi**2 * np.sum(np.outer(ws * s**4, wmu * (1 - mu**2)) * vals)


def linv_fd_oracle(source, box: float = 6.0, h: float = 0.025,
                   support_radius: float = 1.0) -> ScalarFieldAxi:
    """Solve ``v_rr + 3 v_r / r + v_zz = f`` by second-order differences; return ``u = r^2 v``.

    ``source(r, z)`` is the right-hand side in physical cylindrical
    coordinates.  The box ``[0, box]^2`` uses symmetry at r = 0 and z = 0
    and the leading 5D decay ``v = C5 * int f~ / rho^3`` on the far sides.
    """
    N = int(round(box / h))
    h = box / N
    r = np.arange(N + 1) * h
    z = np.arange(N + 1) * h
    Rg, Zg = np.meshgrid(r, z, indexing="ij")
    f = source(Rg, Zg)
    A = C5 * _five_d_monopole(source, support_radius)
    idx = np.arange((N + 1) ** 2).reshape(N + 1, N + 1)
    rows, cols, vals = [], [], []
    rhs = f.ravel().copy()

    def add(i, j, ii, jj, v):
        rows.append(idx[i, j])
        cols.append(idx[ii, jj])
        vals.append(v)

    ih2 = 1.0 / h**2
    for i in range(N + 1):
        for j in range(N + 1):
            k = idx[i, j]
            if i == N or j == N:
                add(i, j, i, j, 1.0)
                rho = math.hypot(r[i], z[j])
                rhs[k] = A / rho**3
                continue
            diag = 0.0
            if i == 0:
                # 3 v_r / r -> 3 v_rr on the axis; v_rr ~ 2 (v1 - v0)/h^2
                add(i, j, 1, j, 8 * ih2)
                diag -= 8 * ih2
            else:
                c = 1.5 / (r[i] * h)
                add(i, j, i + 1, j, ih2 + c)
                add(i, j, i - 1, j, ih2 - c)
                diag -= 2 * ih2
            if j == 0:
                add(i, j, i, 1, 2 * ih2)
                diag -= 2 * ih2
            else:
                add(i, j, i, j + 1, ih2)
                add(i, j, i, j - 1, ih2)
                diag -= 2 * ih2
            add(i, j, i, j, diag)
    M = sparse.csr_matrix((vals, (rows, cols)), shape=((N + 1) ** 2,) * 2)
    try:
        v = spsolve(M, rhs).reshape(N + 1, N + 1)
    except Exception as exc:  # pragma: no cover - scipy raises several types
        raise RuntimeError(f"linear solve failed: {exc}") from exc
    if not np.all(np.isfinite(v)):
        raise RuntimeError("linear solve failed")
    return ScalarFieldAxi(r, z, Rg**2 * v)
