import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from magstar.geometry import AxiField, AxiGrid
from magstar.potentials import (
    C5,
    agm_iterations,
    elliptic_E,
    elliptic_K,
    k5_closed,
    linv_apply,
    linv_fd_oracle,
    linv_gradient,
    linv_kernel,
    newtonian_potential,
    ring_kernel,
)

GRID = AxiGrid(12, 6)


def _binomial_sq(n):
    return (math.comb(2 * n, n) / 4**n) ** 2


def K_series(m, terms=400):
    return math.pi / 2 * sum(_binomial_sq(n) * m**n for n in range(terms))


def E_series(m, terms=400):
    return math.pi / 2 * sum(_binomial_sq(n) * m**n / (1 - 2 * n) for n in range(terms))


@pytest.mark.parametrize("m", [0.0, 0.1, 0.5, 0.8])
def test_elliptic_integrals_match_power_series(m):
    assert elliptic_K(m) == pytest.approx(K_series(m), rel=1e-13)
    assert elliptic_E(m) == pytest.approx(E_series(m), rel=1e-13)


def test_elliptic_legendre_relation():
    # E K' + E' K - K K' = pi/2
    m = np.linspace(0.05, 0.95, 10)
    K, E = elliptic_K(m), elliptic_E(m)
    Kc, Ec = elliptic_K(1 - m), elliptic_E(1 - m)
    assert np.allclose(E * Kc + Ec * K - K * Kc, math.pi / 2, atol=1e-13)


def test_agm_converges_quickly():
    m = np.array([0.0, 0.3, 0.9, 0.999, 1 - 1e-12])
    assert np.all(agm_iterations(m) <= 8)


def test_elliptic_domain():
    with pytest.raises(ValueError):
        elliptic_K(1.0)
    with pytest.raises(ValueError):
        elliptic_K(-0.1)


def test_ring_kernel_matches_direct_quadrature():
    p, q, dz = 0.4, 0.7, 0.2
    direct = integrate.quad(lambda a: 1 / math.sqrt(p * p + q * q - 2 * p * q * math.cos(a) + dz * dz),
                            0, 2 * math.pi, epsabs=0, epsrel=1e-13)[0]
    assert float(ring_kernel(p, q, dz)) == pytest.approx(direct, rel=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.01, 2.0), st.floats(0.05, 2.0))
def test_k5_closed_form_matches_quadrature(p, q, dz):
    assert float(k5_closed(p, q, dz)) == pytest.approx(linv_kernel(p, q, dz), rel=1e-8)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.0, 2.0), st.floats(0.0, 2.0), st.floats(0.05, 2.0))
def test_k5_symmetric(p, q, dz):
    assert float(k5_closed(p, q, dz)) == pytest.approx(float(k5_closed(q, p, -dz)), rel=1e-12)


def test_k5_on_axis():
    rho = math.hypot(0.7, 0.3)
    assert float(k5_closed(0.0, 0.7, 0.3)) == pytest.approx(2 * math.pi**2 / rho**3, rel=1e-14)


def _k5_orbit(p, q, dz, n=48):
    # product Gauss rule on the 3-sphere in hyperspherical angles, target off the pole
    x, w = np.polynomial.legendre.leggauss(n)
    chi = 0.5 * math.pi * (x + 1)
    wc = 0.5 * math.pi * w
    th = chi
    ph = math.pi * (x + 1)
    wp = math.pi * w
    C, T, P = np.meshgrid(chi, th, ph, indexing="ij")
    W = np.einsum("i,j,k->ijk", wc, wc, wp) * np.sin(C) ** 2 * np.sin(T)
    Y = q * np.stack([np.sin(C) * np.sin(T) * np.cos(P), np.sin(C) * np.sin(T) * np.sin(P),
                      np.sin(C) * np.cos(T), np.cos(C)], -1)
    X = p * np.array([0.5, 0.5, 0.5, 0.5])
    d2 = np.sum((Y - X) ** 2, -1) + dz**2
    return float(np.sum(W / d2**1.5))


def test_k5_against_orbit_quadrature_and_monte_carlo():
    p, q, dz = 0.5, 0.7, 0.3
    k5 = float(k5_closed(p, q, dz))
    assert _k5_orbit(p, q, dz) == pytest.approx(k5, rel=1e-4)
    rng = np.random.default_rng(0)
    Y = rng.standard_normal((400000, 4))
    Y *= q / np.linalg.norm(Y, axis=1)[:, None]
    Y[:, 0] -= p
    vals = 1 / (np.sum(Y**2, 1) + dz**2) ** 1.5
    mc = 2 * math.pi**2 * vals.mean()
    err = 2 * math.pi**2 * vals.std() / math.sqrt(len(vals))
    assert abs(mc - k5) < 6 * err


def test_c5_normalization():
    assert C5 == pytest.approx(-1 / (8 * math.pi**2))


def _uniform_ball(r, radius=1.0):
    return np.where(r < radius, 2 * math.pi * (radius**2 - r**2 / 3),
                    4 * math.pi * radius**3 / (3 * np.maximum(r, 1e-300)))


def _targets(n, rmax, seed=0):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1)[:, None]
    return d * rng.uniform(0.05, rmax, n)[:, None]


def test_uniform_ball_potential():
    x = _targets(30, 2.0)
    U = newtonian_potential(lambda s, mu: np.ones_like(s), None, x, GRID)
    assert np.allclose(U, _uniform_ball(np.linalg.norm(x, axis=1)), rtol=1e-12)


def test_dilated_ball_potential():
    # zeta = c|x|^2 maps B1 onto the ball of radius 1 + c
    c = 0.08
    zeta = AxiField.quadratic(GRID, c)
    x = _targets(30, 2.0, seed=1)
    U = newtonian_potential(lambda s, mu: np.ones_like(s), zeta, x, GRID)
    assert np.allclose(U, _uniform_ball(np.linalg.norm(x, axis=1), 1 + c), rtol=1e-10)


def test_background_potential_matches_radial_profile(profile):
    s = np.linspace(0.05, 0.95, 10)
    x = np.stack([s * 0.6, 0 * s, s * 0.8], -1)
    U = newtonian_potential(lambda ss, mu: profile.density(ss), None, x, AxiGrid(24, 12))
    assert np.allclose(U, np.interp(s, profile.s, profile.U0), rtol=1e-6)


def _deformation(scale=0.08):
    rng = np.random.default_rng(3)
    a = rng.standard_normal((GRID.ns, GRID.nmu)) / (1 + np.arange(GRID.ns))[:, None] ** 3
    a[:, 2:] = 0.0
    return AxiField(GRID, a * scale / np.abs(a).sum())


def test_potential_linearity_and_positivity():
    zeta = _deformation()
    x = _targets(12, 1.5, seed=2)
    f1 = lambda s, mu: 1 - s**2
    f2 = lambda s, mu: s**2 * mu**2
    U1 = newtonian_potential(f1, zeta, x, GRID)
    U2 = newtonian_potential(f2, zeta, x, GRID)
    U = newtonian_potential(lambda s, mu: 2 * f1(s, mu) - 3 * f2(s, mu), zeta, x, GRID)
    assert np.allclose(U, 2 * U1 - 3 * U2, rtol=1e-12, atol=1e-14)
    assert np.all(U1 > 0) and np.all(U2 > 0)
    L1 = linv_apply(f1, zeta, x, GRID)
    L2 = linv_apply(f2, zeta, x, GRID)
    L = linv_apply(lambda s, mu: 2 * f1(s, mu) - 3 * f2(s, mu), zeta, x, GRID)
    assert np.allclose(L, 2 * L1 - 3 * L2, rtol=1e-12, atol=1e-14)
    off_axis = np.hypot(x[:, 0], x[:, 1]) > 1e-3
    assert np.all(L1[off_axis] < 0)


def test_kernel_route_agrees_with_multipole():
    zeta = _deformation()
    x = _targets(4, 1.3, seed=4)
    f = lambda s, mu: (1 - s**2) * (1 + mu**2)
    for op in (newtonian_potential, linv_apply):
        a = op(f, zeta, x, GRID)
        b = op(f, zeta, x, GRID, method="kernel")
        assert np.allclose(a, b, rtol=1e-5, atol=1e-7 * np.max(np.abs(a)))


def test_gradients_match_finite_differences():
    zeta = _deformation()
    x = _targets(5, 1.4, seed=5)
    f = lambda s, mu: (1 - s**2) * (1 + s * mu**2)
    _, gU = newtonian_potential(f, zeta, x, GRID, gradient=True)
    v, gL = linv_gradient(f, zeta, x, GRID, return_value=True)
    assert np.allclose(v, linv_apply(f, zeta, x, GRID), rtol=1e-12)
    d = 1e-5
    for k in range(3):
        e = np.zeros(3)
        e[k] = d
        fdU = (newtonian_potential(f, zeta, x + e, GRID) - newtonian_potential(f, zeta, x - e, GRID)) / (2 * d)
        fdL = (linv_apply(f, zeta, x + e, GRID) - linv_apply(f, zeta, x - e, GRID)) / (2 * d)
        assert np.allclose(gU[:, k], fdU, rtol=1e-5, atol=1e-7)
        assert np.allclose(gL[:, k], fdL, rtol=1e-5, atol=1e-7)


def test_linv_recovers_manufactured_solution():
    src = lambda s, mu: (4 * s**2 - 10) * np.exp(-s**2)
    x = _targets(20, 1.5, seed=6)
    exact = (x[:, 0] ** 2 + x[:, 1] ** 2) * np.exp(-np.sum(x**2, 1))
    u = linv_apply(src, None, x, AxiGrid(24, 12), support_radius=4.0)
    assert np.max(np.abs(u - exact)) < 1e-4 * np.max(np.abs(exact))


def test_fd_oracle_is_second_order():
    src = lambda s, mu: (4 * s**2 - 10) * np.exp(-s**2)
    x = _targets(10, 1.2, seed=7)
    R = np.hypot(x[:, 0], x[:, 1])
    exact = R**2 * np.exp(-np.sum(x**2, 1))
    errs = []
    for h in (0.2, 0.1):
        u = linv_fd_oracle(lambda r, z: src(np.hypot(r, z), 0.0), box=8.0, h=h, support_radius=4.0)
        errs.append(np.max(np.abs(u(R, x[:, 2]) - exact)))
    assert 3.0 < errs[0] / errs[1] < 5.0


def test_linv_vanishes_on_axis():
    x = np.array([[0.0, 0.0, 0.3], [0.0, 0.0, -0.7]])
    assert np.allclose(linv_apply(lambda s, mu: 1 - s**2, None, x, GRID), 0.0)
