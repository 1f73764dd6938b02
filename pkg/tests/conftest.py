import numpy as np
import pytest

from limstrain.constitutive import PrototypeLaw
from limstrain.discretization import build_structured_mesh
from limstrain.solver import ApproxProblem, continuation_solve


@pytest.fixture(scope="session")
def law_a2():
    return PrototypeLaw(a=2.0)


@pytest.fixture(scope="session")
def problem_2d(law_a2):
    """Mixed-boundary 2D instance shared by the slower integration tests."""
    mesh = build_structured_mesh("rectangle", (8, 8), dirichlet=("left",))
    return ApproxProblem(law=law_a2, mesh=mesh, kind="full", f=(0.1, 0.0))


@pytest.fixture(scope="session")
def solutions_2d(problem_2d):
    return continuation_solve(problem_2d, schedule=[2, 4, 8, 16, 32, 64])


@pytest.fixture(scope="session")
def problem_1d(law_a2):
    mesh = build_structured_mesh("interval", 64, dirichlet=("left",))
    return ApproxProblem(law=law_a2, mesh=mesh, kind="full", f=1.0, g=0.0)


@pytest.fixture(scope="session")
def solutions_1d(problem_1d):
    return continuation_solve(problem_1d, schedule=[4, 8, 16, 32, 64])


@pytest.fixture()
def rng():
    return np.random.default_rng(20240915)
