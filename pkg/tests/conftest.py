import pytest

from magstar.eos import EquationOfState, solve_radial_star
from magstar.equilibrium import EquilibriumProblem, MagneticCurrentFunction, ModelParams
from magstar.geometry import AxiGrid


@pytest.fixture(scope="session")
def profile():
    return solve_radial_star(EquationOfState(2.0))


@pytest.fixture(scope="session")
def small_grid():
    return AxiGrid(12, 6)


@pytest.fixture(scope="session")
def small_problem(profile, small_grid):
    return EquilibriumProblem(profile, small_grid)


@pytest.fixture(scope="session")
def base_params():
    return ModelParams(0.0, 0.0, MagneticCurrentFunction([1.0, 1.0]))
