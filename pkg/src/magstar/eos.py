"""Polytropic equation of state and the nonrotating Lane-Emden background.

Units: G = 1, so the gravitational potential of a density is
``U = rho * 1/|x|`` and ``Delta U = -4 pi rho``.  The pressure is
``p = kappa * rho**gamma``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy.integrate import cumulative_simpson
from scipy.interpolate import CubicHermiteSpline

FOUR_THIRDS = 4.0 / 3.0
SERIES_START = 1e-2


class EOSDomainError(ValueError):
    """Raised for densities/enthalpies or exponents outside the admissible range."""


class RadialSolveError(RuntimeError):
    """Raised when the Lane-Emden integration finds no surface."""


@dataclass(frozen=True)
class EquationOfState:
    """Polytrope ``p = kappa * rho**gamma``.

    ``gamma`` must lie in (6/5, 2].  Values within ``exclusion_tol`` of 4/3
    are rejected unless ``allow_four_thirds`` is set, since the linearized
    problem is degenerate there.
    """

    gamma: float
    kappa: float = 1.0
    allow_four_thirds: bool = False
    exclusion_tol: float = 1e-6

    def __post_init__(self):
        g = self.gamma
        if not (1.2 < g <= 2.0):
            raise EOSDomainError(f"gamma={g} outside (6/5, 2]")
        if abs(g - FOUR_THIRDS) <= self.exclusion_tol and not self.allow_four_thirds:
            raise EOSDomainError("gamma=4/3 is degenerate; pass allow_four_thirds=True to override")
        if self.kappa <= 0:
            raise EOSDomainError("kappa must be positive")

    @property
    def n(self) -> float:
        """Polytropic index 1/(gamma-1)."""
        return 1.0 / (self.gamma - 1.0)

    def pressure(self, rho):
        return self.kappa * np.asarray(rho, dtype=float) ** self.gamma

    def enthalpy_coefficient(self) -> float:
        return self.kappa * self.gamma / (self.gamma - 1.0)


def enthalpy(rho, eos: EquationOfState):
    """Specific enthalpy ``int_0^rho p'(s)/s ds = kappa*gamma/(gamma-1) * rho**(gamma-1)``."""
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < 0):
        raise EOSDomainError("negative density")
    out = eos.enthalpy_coefficient() * rho ** (eos.gamma - 1.0)
    return out if out.ndim else float(out)


def enthalpy_inverse(h, eos: EquationOfState):
    """Density with the given specific enthalpy (callers clamp vacuum to 0)."""
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise EOSDomainError("negative enthalpy")
    out = (h / eos.enthalpy_coefficient()) ** (1.0 / (eos.gamma - 1.0))
    return out if out.ndim else float(out)


# --------------------------------------------------------------------------
# Lane-Emden integration


@dataclass(frozen=True)
class LaneEmdenSolution:
    n: float
    xi: np.ndarray
    theta: np.ndarray
    dtheta: np.ndarray
    xi1: float


def _le_rhs(xi, theta, dtheta, n):
    # theta is clamped so the last step may overshoot the surface
    src = max(theta, 0.0) ** n
    return dtheta, -src - 2.0 * dtheta / xi


def _rk4_step(xi, th, dth, h, n):
    k1 = _le_rhs(xi, th, dth, n)
    k2 = _le_rhs(xi + h / 2, th + h / 2 * k1[0], dth + h / 2 * k1[1], n)
    k3 = _le_rhs(xi + h / 2, th + h / 2 * k2[0], dth + h / 2 * k2[1], n)
    k4 = _le_rhs(xi + h, th + h * k3[0], dth + h * k3[1], n)
    return (
        th + h / 6 * (k1[0] + 2 * k2[0] + 2 * k3[0] + k4[0]),
        dth + h / 6 * (k1[1] + 2 * k2[1] + 2 * k3[1] + k4[1]),
    )


def _series(xi, n):
    return 1 - xi**2 / 6 + n * xi**4 / 120, -xi / 3 + n * xi**3 / 30


def _march(n, h, xi_max):
    """RK4 from the series start until theta changes sign; returns node lists."""
    xs = [0.0, SERIES_START]
    th0, dth0 = _series(SERIES_START, n)
    ths, dths = [1.0, th0], [0.0, dth0]
    xi, th, dth = SERIES_START, th0, dth0
    while True:
        th_new, dth_new = _rk4_step(xi, th, dth, h, n)
        if th_new <= 0.0:
            return xs, ths, dths, h
        xi += h
        th, dth = th_new, dth_new
        xs.append(xi)
        ths.append(th)
        dths.append(dth)
        if xi > xi_max:
            raise RadialSolveError(f"no Lane-Emden zero before xi_max={xi_max} (n={n:.4g})")


@lru_cache(maxsize=64)
def lane_emden(n: float, grid_size: int = 4000, xi_max: float = 1000.0) -> LaneEmdenSolution:
    """Integrate ``theta'' + 2 theta'/xi + theta**n = 0`` to its first zero.

    Classical RK4 with ``grid_size`` uniform steps after a series start at
    ``xi = 1e-2``; the zero inside the last step is located by bisection on
    the length of a partial RK4 step.
    """
    if grid_size < 32:
        raise ValueError("grid_size must be >= 32")
    # coarse pass fixes the step so that grid_size steps reach the surface
    xs, _, _, _ = _march(n, 0.02, xi_max)
    xi_est = xs[-1] + 0.01
    h = (xi_est - SERIES_START) / grid_size
    xs, ths, dths, h = _march(n, h, xi_max)
    xi, th, dth = xs[-1], ths[-1], dths[-1]
    lo, hi = 0.0, h
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if _rk4_step(xi, th, dth, mid, n)[0] > 0.0:
            lo = mid
        else:
            hi = mid
        if hi - lo < 1e-15 * max(xi, 1.0):
            break
    tau = 0.5 * (lo + hi)
    _, dth_end = _rk4_step(xi, th, dth, tau, n)
    xs.append(xi + tau)
    ths.append(0.0)
    dths.append(dth_end)
    if tau < 1e-9 * h:
        # degenerate partial step: replace the previous node instead of duplicating it
        del xs[-2], ths[-2], dths[-2]
    return LaneEmdenSolution(n, np.array(xs), np.array(ths), np.array(dths), xs[-1])


# --------------------------------------------------------------------------
# Radial star profile


@dataclass(frozen=True)
class RadialStarProfile:
    """Nonrotating polytrope supported on ``[0, R]``.

    ``eos`` is the equation of state the profile is in equilibrium with;
    for gamma = 2 its ``kappa`` has been rescaled to place the surface at R.
    """

    eos: EquationOfState
    radius: float
    rho_c: float
    xi1: float
    s: np.ndarray
    rho0: np.ndarray
    h0: np.ndarray
    U0: np.ndarray
    total_mass: float
    ode_mass: float
    _theta: CubicHermiteSpline = field(repr=False, compare=False)

    @property
    def M0(self) -> float:
        return self.total_mass

    def theta(self, s):
        s = np.asarray(s, dtype=float)
        xi = np.clip(s, 0.0, self.radius) * (self.xi1 / self.radius)
        return np.clip(self._theta(xi), 0.0, None)

    def density(self, s):
        """rho0 at radius s (zero outside the star)."""
        s = np.asarray(s, dtype=float)
        out = self.rho_c * self.theta(s) ** self.eos.n
        return np.where(s < self.radius, out, 0.0)

    def density_derivative(self, s):
        """d rho0 / ds."""
        s = np.asarray(s, dtype=float)
        scale = self.xi1 / self.radius
        xi = np.clip(s, 0.0, self.radius) * scale
        th = np.clip(self._theta(xi), 0.0, None)
        dth = self._theta(xi, 1) * scale
        n = self.eos.n
        out = self.rho_c * n * np.where(th > 0, th, 0.0) ** (n - 1.0) * dth
        return np.where(s < self.radius, out, 0.0)

    def enthalpy(self, s):
        """h(rho0(s)), proportional to theta and therefore smooth up to the surface."""
        coef = self.eos.enthalpy_coefficient() * self.rho_c ** (self.eos.gamma - 1.0)
        s = np.asarray(s, dtype=float)
        return np.where(s < self.radius, coef * self.theta(s), 0.0)

    def enthalpy_derivative(self, s):
        """d h(rho0) / ds."""
        coef = self.eos.enthalpy_coefficient() * self.rho_c ** (self.eos.gamma - 1.0)
        s = np.asarray(s, dtype=float)
        scale = self.xi1 / self.radius
        xi = np.clip(s, 0.0, self.radius) * scale
        return np.where(s < self.radius, coef * self._theta(xi, 1) * scale, 0.0)

    def metadata(self) -> dict:
        return {
            "gamma": self.eos.gamma,
            "kappa": self.eos.kappa,
            "R": self.radius,
            "rho_c": self.rho_c,
            "xi1": self.xi1,
            "M0": self.total_mass,
        }

    def write(self, csv_path, json_path=None, extra: dict | None = None):
        """CSV ``s,rho0,h0,U0`` plus a JSON sidecar with the scalars."""
        csv_path = Path(csv_path)
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["s", "rho0", "h0", "U0"])
            for row in zip(self.s, self.rho0, self.h0, self.U0):
                w.writerow([repr(float(v)) for v in row])
        json_path = Path(json_path) if json_path else csv_path.with_suffix(".json")
        meta = self.metadata()
        if extra:
            meta.update(extra)
        json_path.write_text(json.dumps(meta, indent=2, sort_keys=True))
        return csv_path, json_path


def _gamma_is_two(eos):
    return abs(eos.gamma - 2.0) < 1e-12


def solve_radial_star(
    eos: EquationOfState,
    radius: float | None = 1.0,
    grid_size: int = 4000,
    central_density: float | None = None,
) -> RadialStarProfile:
    """Lane-Emden star for ``eos``.

    With ``kappa`` fixed, the radius and central density determine each
    other, so give one of them.  For gamma = 2 the radius does not depend on
    the central density; ``kappa`` is rescaled to hit ``radius`` and the
    central density defaults to 1.
    """
    n = eos.n
    le = lane_emden(n, grid_size)
    xi1 = le.xi1
    g = eos.gamma
    if _gamma_is_two(eos):
        radius = 1.0 if radius is None else radius
        rho_c = 1.0 if central_density is None else central_density
        alpha = radius / xi1
        eos = replace(eos, kappa=4 * math.pi * (g - 1) * alpha**2 / g)
    elif central_density is not None and radius is None:
        rho_c = central_density
        alpha = math.sqrt(eos.kappa * g * rho_c ** (g - 2) / (4 * math.pi * (g - 1)))
        radius = alpha * xi1
    elif radius is not None and central_density is None:
        alpha = radius / xi1
        rho_c = (4 * math.pi * (g - 1) * alpha**2 / (eos.kappa * g)) ** (1.0 / (g - 2))
    else:
        raise ValueError("give exactly one of radius, central_density")
    if rho_c <= 0:
        raise ValueError("central density must be positive")

    s = le.xi * alpha
    theta = np.clip(le.theta, 0.0, None)
    rho0 = rho_c * theta**n
    h0 = eos.enthalpy_coefficient() * rho_c ** (g - 1) * theta
    # potential by quadrature: U0(s) = m(s)/s + 4 pi int_s^R rho0 t dt
    m = 4 * math.pi * cumulative_simpson(rho0 * s**2, x=s, initial=0.0)
    outer = 4 * math.pi * cumulative_simpson(rho0 * s, x=s, initial=0.0)
    outer = outer[-1] - outer
    with np.errstate(invalid="ignore", divide="ignore"):
        inner = np.where(s > 0, m / np.where(s > 0, s, 1.0), 0.0)
    U0 = inner + outer
    ode_mass = 4 * math.pi * alpha**3 * rho_c * xi1**2 * abs(le.dtheta[-1])
    spline = CubicHermiteSpline(le.xi, le.theta, le.dtheta)
    return RadialStarProfile(
        eos=eos,
        radius=float(radius),
        rho_c=float(rho_c),
        xi1=float(xi1),
        s=s,
        rho0=rho0,
        h0=h0,
        U0=U0,
        total_mass=float(m[-1]),
        ode_mass=float(ode_mass),
        _theta=spline,
    )


def mass_of_central_density(eos: EquationOfState, rho_c: float, rel_step: float = 1e-4,
                            grid_size: int = 4000):
    """Total mass M(rho_c) at fixed kappa and its derivative by central differences."""
    if rho_c <= 0:
        raise ValueError("rho_c must be positive")

    def mass(rc):
        if _gamma_is_two(eos):
            # radius fixed by kappa; the gamma=2 branch of solve_radial_star rescales kappa,
            # so compute the radius implied by the given kappa instead
            le = lane_emden(eos.n, grid_size)
            alpha = math.sqrt(eos.kappa * eos.gamma / (4 * math.pi * (eos.gamma - 1)))
            prof = solve_radial_star(eos, radius=alpha * le.xi1, grid_size=grid_size,
                                     central_density=rc)
        else:
            prof = solve_radial_star(eos, radius=None, grid_size=grid_size, central_density=rc)
        return prof.total_mass

    h = rel_step * rho_c
    m0 = mass(rho_c)
    dm = (mass(rho_c + h) - mass(rho_c - h)) / (2 * h)
    return m0, dm
