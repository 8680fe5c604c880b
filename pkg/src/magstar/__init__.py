"""Equilibria of slowly rotating, weakly magnetized self-gravitating polytropes."""

from .diagnostics import StarSolution, reconstruct_fields, run_diagnostics
from .eos import EquationOfState, RadialStarProfile, lane_emden, solve_radial_star
from .equilibrium import (
    EquilibriumProblem,
    MagneticCurrentFunction,
    ModelParams,
    StateVector,
    continuation_sweep,
    newton_solve,
)
from .geometry import AxiField, AxiGrid, DeformationField, MagneticPotentialField
from .potentials import linv_apply, linv_gradient, newtonian_potential

__all__ = [
    "AxiField",
    "AxiGrid",
    "DeformationField",
    "EquationOfState",
    "EquilibriumProblem",
    "MagneticCurrentFunction",
    "MagneticPotentialField",
    "ModelParams",
    "RadialStarProfile",
    "StarSolution",
    "StateVector",
    "continuation_sweep",
    "lane_emden",
    "linv_apply",
    "linv_gradient",
    "newton_solve",
    "newtonian_potential",
    "reconstruct_fields",
    "run_diagnostics",
    "solve_radial_star",
]
