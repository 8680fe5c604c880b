"""Physical fields of a converged equilibrium and checks against the original PDEs.

Fields live on the meridional half plane (r >= 0, z) of the deformed star.
Inside the star they are obtained from the solver's fields through the
inverse deformation; outside, the magnetic potential comes from the
integral extension formula.  Gradients are analytic (chain rule through
``g^-1`` and differentiated kernels); divergence and curl checks use
centred second-order stencils on a uniform (r, z) grid, independent of the
collocation basis.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from numpy.polynomial import legendre as Leg

from .equilibrium import EquilibriumProblem, ModelParams, StateVector
from .geometry import x_norm, ray_preimage
from .potentials import linv_apply, linv_gradient, newtonian_potential


@dataclass
class StarSolution:
    """A converged (or trial) state together with everything needed to rebuild fields."""

    problem: EquilibriumProblem
    params: ModelParams
    state: StateVector
    residual_norm: float = float("nan")

    @property
    def profile(self):
        return self.problem.profile

    @property
    def grid(self):
        return self.problem.grid

    @cached_property
    def zeta(self):
        return self.state.zeta

    @cached_property
    def phi(self):
        return self.state.phi

    @cached_property
    def mass_factor(self) -> float:
        return self.problem.mass_factor(self.state)

    # -- surface --------------------------------------------------------------
    def surface_radius(self, mu):
        return 1.0 + self.zeta(np.ones_like(np.asarray(mu, float)), mu)

    @property
    def r_eq(self) -> float:
        return float(self.surface_radius(0.0))

    @property
    def r_pol(self) -> float:
        return float(self.surface_radius(1.0))

    @property
    def oblateness(self) -> float:
        return (self.r_eq - self.r_pol) / self.r_eq

    def norms(self):
        return x_norm(self.zeta), x_norm(self.phi)

    # -- pointwise fields -------------------------------------------------------
    def _locate(self, r, z):
        r = np.asarray(r, float)
        z = np.asarray(z, float)
        R = np.hypot(r, z)
        with np.errstate(divide="ignore", invalid="ignore"):
            mu = np.where(R > 0, z / np.where(R > 0, R, 1.0), 1.0)
        inside = R <= self.surface_radius(mu)
        s = np.where(inside, ray_preimage(self.zeta, np.where(inside, R, 0.0), mu, clip=True), np.nan)
        return R, mu, s, inside

    def _ball_gradient(self, s, mu, R, fs, fm):
        """(d/dr, d/dz) of ``f o g^-1`` from the ball partials ``f_s``, ``f_mu``."""
        p = self.zeta.reduced(s, mu)
        ps = self.zeta.reduced(s, mu, ds=True)
        pm = self.zeta.reduced(s, mu, dmu=True)
        ws = 1 + p + s * ps
        dR = fs / ws
        dmu = fm - fs * s * pm / ws
        sin = np.sqrt(np.clip(1 - mu**2, 0, None))
        gr = sin * dR - mu * sin * dmu / R
        gz = mu * dR + sin**2 * dmu / R
        return gr, gz

    def density(self, r, z):
        _, _, s, inside = self._locate(r, z)
        return np.where(inside, self.mass_factor * self.profile.density(np.where(inside, s, 0.0)), 0.0)

    def enthalpy(self, r, z, gradient=False):
        """h(rho) and optionally its (r, z) gradient; zero outside the star."""
        R, mu, s, inside = self._locate(r, z)
        s0 = np.where(inside, s, 0.5)
        c = self.mass_factor ** (self.profile.eos.gamma - 1)
        h = np.where(inside, c * self.profile.enthalpy(s0), 0.0)
        if not gradient:
            return h
        gr, gz = self._ball_gradient(s0, mu, np.where(R > 0, R, 1.0),
                                     c * self.profile.enthalpy_derivative(s0), 0.0 * s0)
        return h, np.where(inside, gr, 0.0), np.where(inside, gz, 0.0)

    def _source(self):
        k = self.params.k_fun
        rho0 = self.profile.density
        phi = self.phi
        return lambda s, mu: rho0(s) * k.k(phi(s, mu))

    def psi(self, r, z, gradient=False):
        """Magnetic potential: ``phi o g^-1`` inside, the extension formula outside."""
        r = np.asarray(r, float)
        z = np.asarray(z, float)
        R, mu, s, inside = self._locate(r, z)
        s0 = np.where(inside, s, 0.5)
        val = np.where(inside, self.phi(s0, mu), 0.0)
        gr = np.zeros_like(val)
        gz = np.zeros_like(val)
        if gradient:
            a, b = self._ball_gradient(s0, mu, np.where(R > 0, R, 1.0),
                                       self.phi.ds(s0, mu), self.phi.dmu(s0, mu))
            gr = np.where(inside, a, 0.0)
            gz = np.where(inside, b, 0.0)
        out = ~inside
        eps = self.params.epsilon
        if np.any(out) and eps != 0:
            pts = np.stack([r[out], np.zeros(out.sum()), z[out]], axis=-1)
            scale = eps * self.mass_factor
            if gradient:
                v, g = linv_gradient(self._source(), self.zeta, pts, self.grid, return_value=True)
                gr[out] = scale * g[:, 0]
                gz[out] = scale * g[:, 2]
            else:
                v = linv_apply(self._source(), self.zeta, pts, self.grid)
            val[out] = scale * v
        if gradient:
            return val, gr, gz
        return val

    def potential(self, r, z, gradient=False):
        r = np.asarray(r, float)
        pts = np.stack([r.ravel(), np.zeros(r.size), np.asarray(z, float).ravel()], axis=-1)
        M = self.mass_factor
        dens = lambda s, mu: M * self.profile.density(s)
        if not gradient:
            return newtonian_potential(dens, self.zeta, pts, self.grid).reshape(r.shape)
        v, g = newtonian_potential(dens, self.zeta, pts, self.grid, gradient=True)
        return v.reshape(r.shape), g[:, 0].reshape(r.shape), g[:, 2].reshape(r.shape)

    def magnetic_field(self, r, z):
        """(B_r, B_z) with ``r B_r = d_z psi`` and ``r B_z = -d_r psi``."""
        _, gr, gz = self.psi(r, z, gradient=True)
        r = np.asarray(r, float)
        return gz / r, -gr / r

    def current(self, r, z):
        """Azimuthal current ``J_theta = r L psi = r eps rho k(psi)``."""
        return (np.asarray(r, float) * self.params.epsilon * self.density(r, z)
                * self.params.k_fun.k(self.psi(r, z)))


def reconstruct_fields(state: StateVector, params: ModelParams, problem: EquilibriumProblem) -> StarSolution:
    res = float(np.max(np.abs(problem.residual(state, params))))
    return StarSolution(problem, params, state, res)


# --------------------------------------------------------------------------
# evaluation grids


def meridional_grid(h: float, extent: float, r0: float | None = None):
    """Uniform (r, z) nodes with spacing h: r from ``r0`` (default h), z from -h."""
    r0 = h if r0 is None else r0
    nr = int(np.floor((extent - r0) / h + 1e-9)) + 1
    nz = int(np.floor(extent / h + 1e-9)) + 2
    r = r0 + h * np.arange(nr)
    z = -h + h * np.arange(nz)
    return np.meshgrid(r, z, indexing="ij")


def field_table(sol: StarSolution, n: int = 32, shell: float = 1.25):
    """Fields on a uniform grid covering the deformed star and a surrounding shell."""
    extent = shell * max(sol.r_eq, sol.r_pol)
    h = extent / n
    r = (np.arange(n) + 0.5) * h
    z = (np.arange(n) + 0.5) * h
    Rg, Zg = np.meshgrid(r, z, indexing="ij")
    rr, zz = Rg.ravel(), Zg.ravel()
    psi, gr, gz = sol.psi(rr, zz, gradient=True)
    return {
        "r": rr,
        "z": zz,
        "rho": sol.density(rr, zz),
        "psi": psi,
        "U": sol.potential(rr, zz),
        "Br": gz / rr,
        "Bz": -gr / rr,
        "Jtheta": sol.current(rr, zz),
    }


def write_field_csv(table: dict, path):
    cols = ["r", "z", "rho", "psi", "U", "Br", "Bz", "Jtheta"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in zip(*(table[c] for c in cols)):
            w.writerow([f"{float(v):.17g}" for v in row])
    return Path(path)


# --------------------------------------------------------------------------
# checks


def momentum_residual(sol: StarSolution, h: float = 1 / 24, cutoff: float = 0.05):
    """``grad h - grad U - w^2 r e_r + eps k(psi) grad psi`` where ``rho > cutoff rho_c``.

    Returned as (max norm relative to ``max |grad h(rho0)|``, points, vectors).
    """
    Rg, Zg = meridional_grid(h, 1.2 * max(sol.r_eq, sol.r_pol))
    r, z = Rg.ravel(), np.abs(Zg.ravel())
    rho = sol.density(r, z)
    mask = rho > cutoff * sol.profile.rho_c * sol.mass_factor
    r, z = r[mask], z[mask]
    _, hr, hz = sol.enthalpy(r, z, gradient=True)
    _, Ur, Uz = sol.potential(r, z, gradient=True)
    psi, pr, pz = sol.psi(r, z, gradient=True)
    kk = sol.params.epsilon * sol.params.k_fun.k(psi)
    res_r = hr - Ur - sol.params.omega2 * r + kk * pr
    res_z = hz - Uz + kk * pz
    ss = np.linspace(0, 1, 2001)
    scale = float(np.max(np.abs(sol.profile.enthalpy_derivative(ss))))
    vec = np.stack([res_r, res_z], axis=-1)
    return float(np.max(np.hypot(res_r, res_z)) / scale), np.stack([r, z], -1), vec


def _stencil_region(sol, h, cutoff):
    Rg, Zg = meridional_grid(h, 1.05 * max(sol.r_eq, sol.r_pol))
    rho = sol.density(Rg, Zg)
    inside = rho > cutoff * sol.profile.rho_c * sol.mass_factor
    interior = np.zeros_like(inside)
    interior[1:-1, 1:-1] = (inside[1:-1, 1:-1] & inside[2:, 1:-1] & inside[:-2, 1:-1]
                            & inside[1:-1, 2:] & inside[1:-1, :-2])
    interior[:, 0] = False  # z = -h ghost row
    return Rg, Zg, interior


def _centred(F, h):
    dr = np.zeros_like(F)
    dz = np.zeros_like(F)
    dr[1:-1, :] = (F[2:, :] - F[:-2, :]) / (2 * h)
    dz[:, 1:-1] = (F[:, 2:] - F[:, :-2]) / (2 * h)
    return dr, dz


def _divergence(Br, Bz, Rg, h):
    drB, _ = _centred(Rg * Br, h)
    _, dzB = _centred(Bz, h)
    return drB / Rg + dzB


def stencil_noise_floor(h: float, Rg=None, Zg=None, mask=None):
    """Relative div-stencil error on the exact potential field ``psi = r^2 exp(-|x|^2)``."""
    if Rg is None:
        Rg, Zg = meridional_grid(h, 1.0)
        mask = np.ones_like(Rg, bool)
        mask[[0, -1], :] = False
        mask[:, [0, -1]] = False
    e = np.exp(-(Rg**2 + Zg**2))
    Br = -2 * Zg * Rg * e
    Bz = -(2 - 2 * Rg**2) * e
    div = _divergence(Br, Bz, Rg, h)
    return float(np.max(np.abs(div[mask])) / np.max(np.hypot(Br, Bz)[mask]))


def div_b_check(sol: StarSolution, h: float = 1 / 24, cutoff: float = 0.05, B=None):
    """Relative max |div B| on the stencil region and the calibrated noise floor."""
    Rg, Zg, mask = _stencil_region(sol, h, cutoff)
    Br, Bz = sol.magnetic_field(Rg, Zg) if B is None else B(Rg, Zg)
    div = _divergence(Br, Bz, Rg, h)
    Bmax = float(np.max(np.hypot(Br, Bz)[mask])) if np.any(mask) else 0.0
    floor = stencil_noise_floor(h, Rg, Zg, mask)
    if Bmax == 0:
        return {"value": 0.0, "floor": floor, "abs": 0.0}
    val = float(np.max(np.abs(div[mask])) / Bmax)
    return {"value": val, "floor": floor, "abs": float(np.max(np.abs(div[mask])))}


def faraday_check(sol: StarSolution, h: float = 1 / 24, cutoff: float = 0.05):
    """Curl of ``v x B`` with ``v = w r e_theta``; equals ``w r div B`` for poloidal B."""
    omega = float(np.sqrt(sol.params.omega2))
    Rg, Zg, mask = _stencil_region(sol, h, cutoff)
    if omega == 0 or sol.params.epsilon == 0:
        return {"value": 0.0, "floor": stencil_noise_floor(h, Rg, Zg, mask), "abs": 0.0}
    Br, Bz = sol.magnetic_field(Rg, Zg)
    # v x B = w r (B_z e_r - B_r e_z); its theta curl is d_z E_r - d_r E_z
    Er = omega * Rg * Bz
    Ez = -omega * Rg * Br
    dEr_dr, dEr_dz = _centred(Er, h)
    dEz_dr, _ = _centred(Ez, h)
    curl = dEr_dz - dEz_dr
    scale = float(np.max((omega * Rg * np.hypot(Br, Bz))[mask]))
    return {"value": float(np.max(np.abs(curl[mask])) / scale),
            "floor": stencil_noise_floor(h, Rg, Zg, mask),
            "abs": float(np.max(np.abs(curl[mask])))}


def force_identity_check(sol: StarSolution, h: float = 1 / 24, cutoff: float = 0.05):
    """Max deviation of ``(curl B) x B + (L psi) grad psi`` with ``L psi = eps rho k(psi)``.

    ``curl B`` comes from centred differences of the reconstructed B.  Nodes
    with r below two grid spacings are reported separately as ``axis``.
    """
    Rg, Zg, mask = _stencil_region(sol, h, cutoff)
    if sol.params.epsilon == 0:
        return {"value": 0.0, "axis": 0.0, "scale": 0.0}
    psi, pr, pz = sol.psi(Rg, Zg, gradient=True)
    Br, Bz = pz / Rg, -pr / Rg
    _, dBr_dz = _centred(Br, h)
    dBz_dr, _ = _centred(Bz, h)
    J = dBr_dz - dBz_dr
    Lpsi = sol.params.epsilon * sol.density(Rg, Zg) * sol.params.k_fun.k(psi)
    # (curl B) x B = J (B_z e_r - B_r e_z)
    dev_r = J * Bz + Lpsi * pr
    dev_z = -J * Br + Lpsi * pz
    dev = np.hypot(dev_r, dev_z)
    scale = float(np.max(np.abs(Lpsi * np.hypot(pr, pz))[mask]))
    axis = Rg < 2 * h
    main = mask & ~axis
    near = mask & axis
    return {
        "value": float(np.max(dev[main])) if np.any(main) else 0.0,
        "axis": float(np.max(dev[near])) if np.any(near) else 0.0,
        "scale": scale,
    }


def physical_mass(sol: StarSolution, n_mu: int = 48, n_r: int = 64) -> float:
    """Integral of rho over the deformed star on a ray-adapted physical grid."""
    xm, wm = Leg.leggauss(n_mu)
    mu = 0.5 * (xm + 1)
    wmu = 0.5 * wm
    xr, wr = Leg.leggauss(n_r)
    u = 0.5 * (xr + 1)
    wu = 0.5 * wr
    Rs = sol.surface_radius(mu)
    R = Rs[:, None] * u[None, :]
    s = ray_preimage(sol.zeta, R, np.broadcast_to(mu[:, None], R.shape))
    rho = sol.mass_factor * sol.profile.density(s)
    inner = np.sum(rho * R**2 * wu[None, :], axis=1) * Rs
    return float(4 * np.pi * np.sum(wmu * inner))


def axis_regularity(sol: StarSolution, z: float = 0.3, radii=(1e-2, 1e-3)):
    """B_r and B_z near the axis; B_r should vanish linearly and B_z stay finite."""
    r = np.asarray(radii, float)
    Br, Bz = sol.magnetic_field(r, np.full_like(r, z))
    return {"r": r.tolist(), "Br": Br.tolist(), "Bz": Bz.tolist()}


def psi_decay(sol: StarSolution, radii=(2.0, 4.0, 8.0), n: int = 9):
    """Max |psi| on spheres of growing radius, relative to the max inside the star.

    Far away ``psi = r^2 v`` with ``v ~ A / |x|^3``, so the sphere maxima
    fall like ``1/|x|``; the returned ``exponent`` is the fitted decay rate
    between the two outer radii.
    """
    if sol.params.epsilon == 0:
        return {"ratios": [0.0] * len(radii), "exponent": 1.0, "monotone": True}
    mu = np.linspace(0.0, 0.98, n)
    inner = float(np.max(np.abs(sol.phi.nodal())))
    maxima = []
    for rad in radii:
        maxima.append(float(np.max(np.abs(sol.psi(rad * np.sqrt(1 - mu**2), rad * mu)))))
    expo = -np.log(maxima[-1] / maxima[-2]) / np.log(radii[-1] / radii[-2])
    return {"ratios": [m / inner for m in maxima], "exponent": float(expo),
            "monotone": bool(np.all(np.diff(maxima) < 0))}


DEFAULT_TOLERANCES = {
    "momentum": 1e-4,
    "mass": 1e-9,
    "noise_factor": 10.0,
    "psi_decay_exponent": 0.1,
}


def run_diagnostics(sol: StarSolution, tolerances: dict | None = None, h: float = 1 / 24) -> dict:
    """Every check with its value and pass/fail, as a JSON-ready dict."""
    tol = dict(DEFAULT_TOLERANCES)
    tol.update(tolerances or {})
    out = {}
    mom, _, _ = momentum_residual(sol, h)
    out["momentum_residual"] = {"value": mom, "tol": tol["momentum"], "pass": mom < tol["momentum"]}
    m = physical_mass(sol)
    rel = abs(m - sol.problem.M0) / sol.problem.M0
    out["mass"] = {"value": m, "relative_error": rel, "tol": tol["mass"], "pass": rel < tol["mass"]}
    d = div_b_check(sol, h)
    out["div_b"] = dict(d, **{"pass": d["value"] <= tol["noise_factor"] * d["floor"]})
    f = faraday_check(sol, h)
    out["faraday"] = dict(f, **{"pass": f["value"] <= tol["noise_factor"] * f["floor"]})
    fi = force_identity_check(sol, h)
    out["force_identity"] = dict(fi, **{"pass": bool(np.isfinite(fi["value"]))})
    pd = psi_decay(sol)
    ok = pd["monotone"] and abs(pd["exponent"] - 1.0) < tol["psi_decay_exponent"]
    out["psi_decay"] = dict(pd, tol=tol["psi_decay_exponent"], **{"pass": ok})
    out["oblateness"] = {"value": sol.oblateness, "r_eq": sol.r_eq, "r_pol": sol.r_pol,
                         "pass": sol.oblateness >= -1e-12}
    out["residual_norm"] = sol.residual_norm
    out["all_pass"] = all(v["pass"] for v in out.values() if isinstance(v, dict) and "pass" in v)
    return out


def write_json(obj, path):
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True))
    return Path(path)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    return obj
