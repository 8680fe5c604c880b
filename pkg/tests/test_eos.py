import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from magstar.eos import (
    EOSDomainError,
    EquationOfState,
    enthalpy,
    enthalpy_inverse,
    lane_emden,
    mass_of_central_density,
    solve_radial_star,
)


def test_lane_emden_n0_closed_form():
    le = lane_emden(0.0)
    assert le.xi1 == pytest.approx(math.sqrt(6.0), rel=1e-10)
    assert np.allclose(le.theta, 1 - le.xi**2 / 6, atol=1e-10)


def test_lane_emden_n1_closed_form():
    le = lane_emden(1.0)
    assert le.xi1 == pytest.approx(math.pi, rel=1e-10)
    inner = le.xi[1:-1]
    assert np.allclose(le.theta[1:-1], np.sin(inner) / inner, atol=1e-9)
    assert le.dtheta[-1] == pytest.approx(-1 / math.pi, rel=1e-8)


def test_lane_emden_rejects_tiny_grid():
    with pytest.raises(ValueError):
        lane_emden(1.0, grid_size=8)


@pytest.mark.parametrize("gamma", [1.1, 1.2, 2.5, 4 / 3])
def test_gamma_guard(gamma):
    with pytest.raises(EOSDomainError):
        EquationOfState(gamma)


def test_four_thirds_override():
    assert EquationOfState(4 / 3, allow_four_thirds=True).n == pytest.approx(3.0)


def test_negative_kappa_rejected():
    with pytest.raises(EOSDomainError):
        EquationOfState(2.0, kappa=-1.0)


@given(st.floats(1.25, 2.0), st.floats(1e-3, 10.0))
def test_enthalpy_roundtrip(gamma, rho):
    if abs(gamma - 4 / 3) < 1e-3:
        return
    eos = EquationOfState(gamma, kappa=0.7)
    assert enthalpy_inverse(enthalpy(rho, eos), eos) == pytest.approx(rho, rel=1e-12)


def test_enthalpy_is_integral_of_dp_over_rho():
    eos = EquationOfState(1.7, kappa=0.4)
    exact = quad(lambda r: eos.kappa * eos.gamma * r ** (eos.gamma - 2), 0, 2.0)[0]
    assert enthalpy(2.0, eos) == pytest.approx(exact, rel=1e-10)


def test_enthalpy_domain():
    eos = EquationOfState(2.0)
    with pytest.raises(EOSDomainError):
        enthalpy(-1.0, eos)
    with pytest.raises(EOSDomainError):
        enthalpy_inverse(-1.0, eos)


def test_gamma_two_profile_closed_form():
    prof = solve_radial_star(EquationOfState(2.0))
    assert prof.radius == 1.0 and prof.rho_c == 1.0
    s = np.linspace(0.01, 0.99, 50)
    assert np.allclose(prof.density(s), np.sin(np.pi * s) / (np.pi * s), atol=1e-9)
    assert prof.M0 == pytest.approx(4 / math.pi, rel=1e-8)
    assert prof.ode_mass == pytest.approx(4 / math.pi, rel=1e-8)
    assert prof.density(1.2) == 0.0


@pytest.mark.parametrize("gamma", [1.5, 1.8, 2.0])
def test_hydrostatic_identity(gamma):
    # h0 - U0 is constant and equals -M/R at the surface
    prof = solve_radial_star(EquationOfState(gamma))
    diff = prof.h0 - prof.U0
    assert np.max(np.abs(diff + prof.M0 / prof.radius)) < 1e-7


@pytest.mark.parametrize("gamma", [1.5, 2.0])
def test_profile_derivatives_match_finite_differences(gamma):
    prof = solve_radial_star(EquationOfState(gamma))
    s = np.linspace(0.1, 0.9, 9)
    d = 1e-6
    fd_h = (prof.enthalpy(s + d) - prof.enthalpy(s - d)) / (2 * d)
    fd_r = (prof.density(s + d) - prof.density(s - d)) / (2 * d)
    assert np.allclose(prof.enthalpy_derivative(s), fd_h, rtol=1e-6, atol=1e-8)
    assert np.allclose(prof.density_derivative(s), fd_r, rtol=1e-6, atol=1e-8)


def test_radius_and_central_density_are_consistent():
    eos = EquationOfState(1.6, kappa=0.5)
    a = solve_radial_star(eos, radius=None, central_density=2.0)
    b = solve_radial_star(eos, radius=a.radius)
    assert b.rho_c == pytest.approx(2.0, rel=1e-10)
    with pytest.raises(ValueError):
        solve_radial_star(eos, radius=1.0, central_density=1.0)


@settings(max_examples=10, deadline=None)
@given(st.floats(1.3, 1.9))
def test_mass_scaling_exponent(gamma):
    # at fixed kappa, M is proportional to rho_c**((3 gamma - 4)/2)
    if abs(gamma - 4 / 3) < 1e-2:
        return
    eos = EquationOfState(gamma)
    m, dm = mass_of_central_density(eos, 1.3, grid_size=1000)
    assert dm * 1.3 / m == pytest.approx((3 * gamma - 4) / 2, abs=1e-6)


def test_four_thirds_mass_is_stationary():
    eos = EquationOfState(4 / 3, allow_four_thirds=True)
    m, dm = mass_of_central_density(eos, 1.0, grid_size=1000)
    assert abs(dm) < 1e-6 * m


def test_profile_write(tmp_path):
    prof = solve_radial_star(EquationOfState(2.0), grid_size=200)
    csv_path, json_path = prof.write(tmp_path / "radial.csv", extra={"config_hash": "abc"})
    lines = csv_path.read_text().splitlines()
    assert lines[0] == "s,rho0,h0,U0"
    assert len(lines) == len(prof.s) + 1
    meta = json.loads(json_path.read_text())
    assert meta["config_hash"] == "abc"
    assert meta["M0"] == pytest.approx(prof.M0)
