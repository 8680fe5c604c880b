"""Nonlinear equilibrium system for the deformation zeta and magnetic potential phi.

Unknowns are nodal values of zeta and phi on the collocation grid.  The
residual is

    F1 = U(g x) - U(0) + w^2/2 r^2 (1 + p)^2 - h(M rho0(x)) + h(M rho0(0)) - eps K(phi(x))
    F2 = phi(x) - eps M L^-1[rho0 k(phi)](g x)

where ``U`` is the potential of the deformed density ``M rho0 o g^-1``,
``p = zeta/|x|^2`` and ``M`` the mass factor.  The arbitrary constant of
the Bernoulli relation is removed by subtracting values at the origin.

The Jacobian is assembled analytically by differentiating the discrete
ray-quadrature operators (source radius, Jacobian determinant and target
radius all move with zeta).  A finite-difference zeta-block is kept for
validation.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
from numpy.polynomial import Polynomial
from numpy.polynomial import chebyshev as Ch

from .geometry import (
    DEFAULT_TRUST_RADIUS,
    AxiGrid,
    DeformationField,
    FoldError,
    MagneticPotentialField,
    background_mass,
    mass_factor,
    mass_factor_gradient,
    x_norm,
)
from .potentials import C5, _TARGET_CHUNK, build_ray_quadrature, kernel_sums, source_weights


class ParameterGuardError(ValueError):
    """Rotation or coupling outside the configured continuation guard."""


class DegeneracyError(RuntimeError):
    """The Jacobian is numerically singular."""


class NonConvergenceError(RuntimeError):
    def __init__(self, msg, trace=None, state=None):
        super().__init__(msg)
        self.trace = trace or []
        self.state = state


# --------------------------------------------------------------------------
# model description


@dataclass(frozen=True)
class MagneticCurrentFunction:
    """Polynomial current function ``k(s) = sum c_i s^i`` with exact K and k'."""

    coeffs: tuple = (1.0,)

    def __post_init__(self):
        c = tuple(float(v) for v in self.coeffs)
        if not c:
            c = (0.0,)
        if len(c) > 7:
            raise ValueError("current function degree must be <= 6")
        object.__setattr__(self, "coeffs", c)

    @property
    def _poly(self):
        return Polynomial(self.coeffs)

    def k(self, s):
        return self._poly(np.asarray(s, float))

    def K(self, s):
        """Antiderivative with ``K(0) = 0``."""
        return self._poly.integ()(np.asarray(s, float))

    def dk(self, s):
        return self._poly.deriv()(np.asarray(s, float))

    def to_list(self):
        return list(self.coeffs)


@dataclass(frozen=True)
class ModelParams:
    """Rotation (``omega2`` = omega squared), magnetic coupling and guards."""

    omega2: float = 0.0
    epsilon: float = 0.0
    k_fun: MagneticCurrentFunction = field(default_factory=MagneticCurrentFunction)
    omega2_max: float = 0.05
    eps_max: float = 0.1

    def __post_init__(self):
        if self.omega2 < 0:
            raise ParameterGuardError("omega2 must be nonnegative")
        if self.omega2 > self.omega2_max:
            raise ParameterGuardError(f"omega2={self.omega2} exceeds guard {self.omega2_max}")
        if abs(self.epsilon) > self.eps_max:
            raise ParameterGuardError(f"|epsilon|={abs(self.epsilon)} exceeds guard {self.eps_max}")

    def with_values(self, omega2=None, epsilon=None):
        return replace(self,
                       omega2=self.omega2 if omega2 is None else omega2,
                       epsilon=self.epsilon if epsilon is None else epsilon)

    def to_dict(self):
        return {"omega2": self.omega2, "epsilon": self.epsilon, "k_coeffs": self.k_fun.to_list(),
                "omega2_max": self.omega2_max, "eps_max": self.eps_max}


@dataclass(frozen=True, eq=False)
class StateVector:
    """Nodal values of (zeta, phi), concatenated as ``[zeta, phi]``."""

    grid: AxiGrid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, float).ravel()
        if v.size != 2 * self.grid.size:
            raise ValueError("state size does not match the grid")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(2 * grid.size))

    @classmethod
    def from_fields(cls, zeta, phi):
        return cls(zeta.grid, np.concatenate([zeta.nodal(), phi.nodal()]))

    @property
    def zeta_nodal(self):
        return self.values[: self.grid.size]

    @property
    def phi_nodal(self):
        return self.values[self.grid.size:]

    @property
    def zeta(self) -> DeformationField:
        return DeformationField.from_nodal(self.grid, self.zeta_nodal)

    @property
    def phi(self) -> MagneticPotentialField:
        return MagneticPotentialField.from_nodal(self.grid, self.phi_nodal)

    def __add__(self, other):
        v = other.values if isinstance(other, StateVector) else np.asarray(other)
        return StateVector(self.grid, self.values + v)

    def __sub__(self, other):
        return StateVector(self.grid, self.values - other.values)

    def norms(self):
        return x_norm(self.zeta), x_norm(self.phi)


# --------------------------------------------------------------------------
# discrete operators and their linearization


def _node_targets(state):
    """Radii and direction cosines of ``g(x)`` at the nodes, then the origin."""
    grid = state.grid
    s, mu = grid.nodes_sm
    p = state.zeta.reduced(s, mu)
    R = np.append(s * (1 + p), 0.0)
    m = np.append(mu, 1.0)
    return R, m, p


@dataclass
class _RayPass:
    """Operator values and derivative tables for one set of targets."""

    V3: np.ndarray
    dV3: np.ndarray
    L1: np.ndarray
    dL1: np.ndarray
    G3: np.ndarray | None = None  # geometric derivative w.r.t. zeta coefficients
    G5: np.ndarray | None = None
    S5: np.ndarray | None = None  # derivative w.r.t. phi coefficients


def _ray_pass(state, profile, k_fun, linearize):
    """Evaluate gravity and L^-1 kernels at g(nodes) and the origin in one sweep."""
    grid = state.grid
    zeta = state.zeta
    phi = state.phi
    R, mu, _ = _node_targets(state)
    nT = len(R)
    ncoef = grid.size
    out = _RayPass(*(np.zeros(nT) for _ in range(4)))
    if linearize:
        out.G3 = np.zeros((nT, ncoef))
        out.G5 = np.zeros((nT, ncoef))
        out.S5 = np.zeros((nT, ncoef))
        P = zeta._pv(grid.rays[0])  # (K, nmu)
    derivs = ("R", "w") if linearize else ("R",)
    for lo in range(0, nT, _TARGET_CHUNK):
        sl = slice(lo, min(lo + _TARGET_CHUNK, nT))
        rq = build_ray_quadrature(zeta, R[sl], mu[sl], grid)
        mu_k = np.broadcast_to(rq.mu_k[None, :, None], rq.S.shape)
        rho = profile.density(rq.S)
        ph = phi(rq.S, mu_k)
        q3 = source_weights(rq, 3) * rho
        q5 = source_weights(rq, 5) * rho * k_fun.k(ph)
        k3 = kernel_sums(rq, grid.lmax, 3, derivs)
        k5 = kernel_sums(rq, grid.lmax, 5, derivs)
        out.V3[sl] = np.einsum("tkj,tkj->t", k3["val"], q3)
        out.dV3[sl] = np.einsum("tkj,tkj->t", k3["R"], q3)
        out.L1[sl] = np.einsum("tkj,tkj->t", k5["val"], q5)
        out.dL1[sl] = np.einsum("tkj,tkj->t", k5["R"], q5)
        if not linearize:
            continue
        x = 2 * rq.S - 1
        T = Ch.chebvander(x, grid.ns - 1)
        Td = Ch.chebvander(x, grid.ns - 2) @ (2.0 * Ch.chebder(np.eye(grid.ns)))
        onep = 1 + rq.p
        ws = rq.w_s
        for dim, ks, qq, dest in ((3, k3, q3, out.G3), (5, k5, q5, out.G5)):
            # variation of det (dim-1) q/(1+p) + (q + s q_s)/w_s and of the kernel via w
            a = qq * (ks["val"] * ((dim - 1) / onep + 1 / ws) + ks["w"] * rq.S)
            b = qq * ks["val"] * rq.S / ws
            A = np.einsum("tkj,tkjm->tkm", a, T) + np.einsum("tkj,tkjm->tkm", b, Td)
            dest[sl] = np.einsum("tkm,kl->tml", A, P).reshape(-1, ncoef)
        c = source_weights(rq, 5) * rho * k_fun.dk(ph) * k5["val"] * rq.S**2
        out.S5[sl] = np.einsum("tkm,kl->tml", np.einsum("tkj,tkjm->tkm", c, T), P).reshape(-1, ncoef)
    return out


class EquilibriumProblem:
    """Residual and Jacobian of the collocated system for a fixed background star."""

    def __init__(self, profile, grid: AxiGrid | None = None):
        self.profile = profile
        self.grid = grid or AxiGrid()
        self.gamma = profile.eos.gamma
        self.M0 = background_mass(profile, self.grid)
        s, mu = self.grid.nodes_sm
        self.s = s
        self.mu = mu
        self.r2 = s**2 * (1 - mu**2)
        self.dh0 = profile.enthalpy(s) - float(profile.enthalpy(0.0))

    # -- residual ----------------------------------------------------------------
    def mass_factor(self, state):
        return mass_factor(state.zeta, self.profile, self.M0)

    def _assemble_residual(self, state, params, rp):
        n = self.grid.size
        M = self.mass_factor(state)
        R, mu, p = _node_targets(state)
        eps = params.epsilon
        F1 = (M * (rp.V3[:n] - rp.V3[n])
              + 0.5 * params.omega2 * self.r2 * (1 + p) ** 2
              - M ** (self.gamma - 1) * self.dh0
              - eps * params.k_fun.K(state.phi_nodal))
        F3 = C5 * R[:n] ** 2 * (1 - mu[:n] ** 2) * rp.L1[:n]
        F2 = state.phi_nodal - eps * M * F3
        return np.concatenate([F1, F2]), M, F3

    def residual(self, state: StateVector, params: ModelParams) -> np.ndarray:
        rp = _ray_pass(state, self.profile, params.k_fun, linearize=False)
        return self._assemble_residual(state, params, rp)[0]

    def residual_F1(self, state, params):
        return self.residual(state, params)[: self.grid.size]

    def residual_F2(self, state, params):
        return self.residual(state, params)[self.grid.size:]

    # -- Jacobian ----------------------------------------------------------------
    def jacobian(self, state: StateVector, params: ModelParams, zeta_block: str = "analytic",
                 with_residual: bool = False):
        """Dense Jacobian with respect to nodal values ``[zeta, phi]``."""
        grid = self.grid
        n = grid.size
        rp = _ray_pass(state, self.profile, params.k_fun, linearize=True)
        F, M, F3 = self._assemble_residual(state, params, rp)
        R, mu, p = _node_targets(state)
        N = grid.nodal_to_coeff_matrix
        Mrow = mass_factor_gradient(state.zeta, self.profile, self.M0)
        eps = params.epsilon
        g = self.gamma
        Rn = R[:n]
        sin2 = 1 - mu[:n] ** 2

        J = np.zeros((2 * n, 2 * n))
        if zeta_block == "analytic":
            J11 = np.outer(rp.V3[:n] - rp.V3[n], Mrow)
            J11 += M * (rp.G3[:n] - rp.G3[n]) @ N
            # target radius moves by s q = zeta/s at each node
            J11[np.diag_indices(n)] += (M * rp.dV3[:n] + params.omega2 * self.r2 * (1 + p) / self.s) / self.s
            J11 -= (g - 1) * M ** (g - 2) * np.outer(self.dh0, Mrow)
        elif zeta_block == "fd":
            J11 = self._fd_zeta_block(state, params)
        else:
            raise ValueError(f"unknown zeta_block {zeta_block!r}")
        J[:n, :n] = J11
        J[:n, n:] = np.diag(-eps * params.k_fun.k(state.phi_nodal))

        dF3dR = C5 * sin2 * (2 * Rn * rp.L1[:n] + Rn**2 * rp.dL1[:n])
        J21 = -eps * np.outer(F3, Mrow)
        J21 -= eps * M * (C5 * (Rn**2 * sin2)[:, None] * rp.G5[:n]) @ N
        J21[np.diag_indices(n)] -= eps * M * dF3dR / self.s
        J[n:, :n] = J21
        J[n:, n:] = np.eye(n) - eps * M * (C5 * (Rn**2 * sin2)[:, None] * rp.S5[:n]) @ N
        if with_residual:
            return J, F
        return J

    def _fd_zeta_block(self, state, params, step=1e-5):
        n = self.grid.size
        cols = np.empty((n, n))
        for i in range(n):
            h = step * max(1.0, abs(state.zeta_nodal[i]))
            e = np.zeros(2 * n)
            e[i] = h
            fp = self.residual_F1(state + e, params)
            fm = self.residual_F1(state + (-e), params)
            cols[:, i] = (fp - fm) / (2 * h)
        return cols

    def jacobian_blocks(self, state, params, zeta_block="analytic"):
        J = self.jacobian(state, params, zeta_block)
        n = self.grid.size
        return {"F1_zeta": J[:n, :n], "F1_phi": J[:n, n:],
                "F2_zeta": J[n:, :n], "F2_phi": J[n:, n:]}

    def condition_number(self, J):
        return float(np.linalg.cond(J))

    # -- first-order response ------------------------------------------------------
    def first_order_predictors(self, params: ModelParams):
        """Unit-parameter responses ``(zeta1, phi1)`` at the undeformed star.

        ``zeta ~ omega2 zeta1`` and ``phi ~ eps phi1``: zeta1 solves the
        linearized F1 with the centrifugal forcing ``r^2/2``; phi1 is
        ``k(0) L^-1[rho0]`` at the nodes.
        """
        zero = StateVector.zeros(self.grid)
        base = ModelParams(0.0, 0.0, params.k_fun, params.omega2_max, params.eps_max)
        J = self.jacobian(zero, base)
        n = self.grid.size
        J11 = J[:n, :n]
        cond = np.linalg.cond(J11)
        if not np.isfinite(cond) or cond > 1e14:
            raise DegeneracyError("shape block is singular at the undeformed star")
        zeta1 = np.linalg.solve(J11, -0.5 * self.r2)
        rp = _ray_pass(zero, self.profile, params.k_fun, linearize=False)
        phi1 = C5 * self.r2 * rp.L1[:n]
        return (DeformationField.from_nodal(self.grid, zeta1),
                MagneticPotentialField.from_nodal(self.grid, phi1))

    def predictor_state(self, params, predictors=None, base=None, dparams=None):
        z1, p1 = predictors or self.first_order_predictors(params)
        dw, de = dparams if dparams is not None else (params.omega2, params.epsilon)
        start = base.values if base is not None else np.zeros(2 * self.grid.size)
        return StateVector(self.grid, start + np.concatenate([dw * z1.nodal(), de * p1.nodal()]))


# --------------------------------------------------------------------------
# Newton


@dataclass
class TraceRow:
    iteration: int
    residual: float
    step: float
    condition: float


def newton_solve(problem: EquilibriumProblem, params: ModelParams,
                 initial: StateVector | None = None, tol: float = 1e-9, max_iter: int = 20,
                 trust_radius: float = DEFAULT_TRUST_RADIUS, zeta_block: str = "analytic"):
    """Damped Newton on the nodal unknowns.

    Steps are halved until the iterate stays inside the trust radius, does
    not fold and decreases the max-norm residual.  Returns
    ``(state, trace)``; raises ``NonConvergenceError`` after ``max_iter``.
    """
    state = initial if initial is not None else StateVector.zeros(problem.grid)
    F = problem.residual(state, params)
    norm = float(np.max(np.abs(F)))
    trace = [TraceRow(0, norm, 0.0, float("nan"))]
    for it in range(1, max_iter + 1):
        if norm < tol:
            return state, trace
        J = problem.jacobian(state, params, zeta_block)
        try:
            dx = np.linalg.solve(J, -F)
        except np.linalg.LinAlgError as exc:
            raise DegeneracyError(str(exc)) from exc
        cond = float(np.linalg.cond(J))
        lam = 1.0
        while True:
            cand = StateVector(state.grid, state.values + lam * dx)
            ok = x_norm(cand.zeta) <= trust_radius
            if ok:
                try:
                    Fc = problem.residual(cand, params)
                    nc = float(np.max(np.abs(Fc)))
                    ok = np.isfinite(nc) and nc < norm
                except FoldError:
                    ok = False
            if ok:
                break
            lam *= 0.5
            if lam < 1e-6:
                raise NonConvergenceError("line search failed", trace, state)
        state, F, norm = cand, Fc, nc
        trace.append(TraceRow(it, norm, float(lam * np.max(np.abs(dx))), cond))
    if norm < tol:
        return state, trace
    raise NonConvergenceError(f"residual {norm:.3e} after {max_iter} iterations", trace, state)


# --------------------------------------------------------------------------
# continuation


@dataclass
class SweepPoint:
    omega2: float
    epsilon: float
    state: StateVector | None
    trace: list
    error: str | None = None


def _solve_point(problem, params, start, tol, max_iter):
    try:
        state, trace = newton_solve(problem, params, start, tol=tol, max_iter=max_iter)
        return state, trace, None
    except (NonConvergenceError, DegeneracyError, FoldError) as exc:
        return None, getattr(exc, "trace", []), f"{type(exc).__name__}: {exc}"


def continuation_sweep(problem: EquilibriumProblem, base: ModelParams, omega2_values, eps_values,
                       tol: float = 1e-9, max_iter: int = 20, workers: int = 1, reverse: bool = False):
    """Solve on the grid ``omega2_values x eps_values`` by warm-started Newton.

    Points are visited in anti-diagonal fronts from the ``(0, 0)`` corner
    (or the opposite corner with ``reverse``).  Each point starts from its
    solved predecessor plus the first-order predictor increment, so the
    result does not depend on ``workers``.
    """
    w = list(omega2_values)
    e = list(eps_values)
    if reverse:
        w, e = w[::-1], e[::-1]
    pred = problem.first_order_predictors(base)
    nw, ne = len(w), len(e)
    solved: dict = {}
    results: dict = {}
    executor = None
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor
        executor = ThreadPoolExecutor(max_workers=workers)
    try:
        for d in range(nw + ne - 1):
            jobs = []
            for i in range(nw):
                j = d - i
                if not 0 <= j < ne:
                    continue
                prev = None
                for pi, pj in ((i - 1, j), (i, j - 1)):
                    if (pi, pj) in solved:
                        prev = (pi, pj)
                        break
                if prev is None:
                    start = problem.predictor_state(base, pred, None, (w[i], e[j]))
                else:
                    dw = w[i] - w[prev[0]]
                    de = e[j] - e[prev[1]]
                    start = problem.predictor_state(base, pred, solved[prev], (dw, de))
                params = base.with_values(w[i], e[j])
                jobs.append(((i, j), params, start))
            if executor is None:
                outs = [_solve_point(problem, p, s0, tol, max_iter) for _, p, s0 in jobs]
            else:
                outs = list(executor.map(lambda a: _solve_point(problem, a[1], a[2], tol, max_iter), jobs))
            for (key, params, _), (state, trace, err) in zip(jobs, outs):
                results[key] = SweepPoint(params.omega2, params.epsilon, state, trace, err)
                if state is not None:
                    solved[key] = state
    finally:
        if executor is not None:
            executor.shutdown()
    ordered = sorted(results.values(), key=lambda r: (r.omega2, r.epsilon))
    return ordered
