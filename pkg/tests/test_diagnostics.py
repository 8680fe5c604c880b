import json

import numpy as np
import pytest

from magstar.diagnostics import (
    StarSolution,
    axis_regularity,
    div_b_check,
    faraday_check,
    field_table,
    force_identity_check,
    momentum_residual,
    physical_mass,
    psi_decay,
    reconstruct_fields,
    run_diagnostics,
    stencil_noise_floor,
    write_field_csv,
    write_json,
)
from magstar.equilibrium import StateVector, newton_solve


@pytest.fixture(scope="module")
def solution(small_problem, base_params):
    params = base_params.with_values(0.02, 0.05)
    state, trace = newton_solve(small_problem, params, tol=1e-12)
    return reconstruct_fields(state, params, small_problem)


@pytest.fixture(scope="module")
def static(small_problem, base_params):
    return reconstruct_fields(StateVector.zeros(small_problem.grid), base_params, small_problem)


def test_reconstruction_metadata(solution):
    assert solution.residual_norm < 1e-12
    assert solution.r_eq > 1.0 > solution.r_pol
    assert solution.oblateness > 0


def test_static_star_fields(static, profile):
    assert static.oblateness == 0.0
    r = np.array([0.2, 0.5, 0.9, 1.1])
    assert np.allclose(static.density(r, 0 * r), profile.density(r))
    assert np.allclose(static.potential(r, 0 * r), np.interp(r, profile.s, profile.U0) * (r <= 1)
                       + profile.M0 / r * (r > 1), rtol=1e-6)


def test_density_vanishes_outside_surface(solution):
    mu = np.linspace(0, 1, 7)
    R = solution.surface_radius(mu) * 1.001
    r, z = R * np.sqrt(1 - mu**2), R * mu
    assert not np.any(solution.density(r, z))
    assert np.all(solution.density(0.999 * r, 0.999 * z) >= 0)


def test_psi_is_continuous_across_surface(solution):
    mu = np.array([0.1, 0.5, 0.8])
    R = solution.surface_radius(mu)
    sin = np.sqrt(1 - mu**2)
    inner = solution.psi((R - 1e-7) * sin, (R - 1e-7) * mu)
    outer = solution.psi((R + 1e-7) * sin, (R + 1e-7) * mu)
    assert np.allclose(inner, outer, atol=1e-8 * np.max(np.abs(inner)))


@pytest.mark.parametrize("name", ["enthalpy", "psi", "potential"])
def test_field_gradients_match_finite_differences(solution, name):
    fn = getattr(solution, name)
    r = np.array([0.3, 0.6, 0.2, 1.6])
    z = np.array([0.2, 0.4, 0.7, 0.3])
    _, gr, gz = fn(r, z, gradient=True)
    d = 1e-6
    fr = (fn(r + d, z) - fn(r - d, z)) / (2 * d)
    fz = (fn(r, z + d) - fn(r, z - d)) / (2 * d)
    scale = np.max(np.abs(np.concatenate([gr, gz])))
    assert np.allclose(gr, fr, atol=1e-6 * scale)
    assert np.allclose(gz, fz, atol=1e-6 * scale)


def test_momentum_residual_small_for_solution(solution):
    val, pts, vec = momentum_residual(solution)
    assert val < 1e-6
    assert len(pts) == len(vec) > 50


def test_momentum_residual_detects_unconverged_state(solution):
    # negative control: a first-order predictor is not an equilibrium
    prob = solution.problem
    start = prob.predictor_state(solution.params)
    trial = StarSolution(prob, solution.params, start)
    assert momentum_residual(trial)[0] > 100 * momentum_residual(solution)[0]


def test_noise_floor_is_second_order():
    a = stencil_noise_floor(1 / 12)
    b = stencil_noise_floor(1 / 24)
    assert a / b == pytest.approx(4.0, rel=0.1)


def test_div_b_within_noise_floor(solution):
    d = div_b_check(solution)
    assert d["value"] <= 10 * d["floor"]
    f = faraday_check(solution)
    assert f["value"] <= 10 * f["floor"]


def test_div_b_detects_sources(solution):
    # negative control: a radial field has div B = 3
    d = div_b_check(solution, B=lambda r, z: (r, z))
    assert d["value"] > 100 * d["floor"]


def test_force_identity_converges_at_second_order(solution):
    a = force_identity_check(solution, h=1 / 12)
    b = force_identity_check(solution, h=1 / 24)
    assert a["value"] / b["value"] == pytest.approx(4.0, rel=0.35)
    assert b["value"] < 1e-2 * b["scale"]


def test_static_star_has_trivial_magnetic_checks(static):
    assert force_identity_check(static)["value"] == 0.0
    assert faraday_check(static)["value"] == 0.0
    assert psi_decay(static)["monotone"]


def test_physical_mass_is_conserved(solution, static):
    M0 = solution.problem.M0
    assert physical_mass(static) == pytest.approx(M0, rel=1e-9)
    assert physical_mass(solution) == pytest.approx(M0, rel=1e-9)


def test_axis_regularity(solution):
    ax = axis_regularity(solution)
    Br, Bz = np.abs(ax["Br"]), np.abs(ax["Bz"])
    assert Br[0] / Br[1] == pytest.approx(10.0, rel=0.01)
    assert Bz[0] == pytest.approx(Bz[1], rel=1e-3)


def test_psi_decays_like_inverse_radius(solution):
    pd = psi_decay(solution)
    assert pd["monotone"]
    assert pd["exponent"] == pytest.approx(1.0, abs=0.1)


def test_run_diagnostics_and_json(solution, tmp_path):
    report = run_diagnostics(solution)
    assert report["all_pass"], report
    path = write_json(report, tmp_path / "d.json")
    assert json.loads(path.read_text())["all_pass"] is True


def test_field_csv_is_deterministic(solution, tmp_path):
    a = write_field_csv(field_table(solution, n=8), tmp_path / "a.csv")
    b = write_field_csv(field_table(solution, n=8), tmp_path / "b.csv")
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert lines[0] == "r,z,rho,psi,U,Br,Bz,Jtheta"
    assert len(lines) == 65
