import numpy as np
import pytest

from fixedstress import biot, cases


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240601)


@pytest.fixture(scope="session")
def setup1_problem():
    return cases.build_case(cases.UNIT_SQUARE_SETUP1, 1e-12)


@pytest.fixture(scope="session")
def setup1_ops(setup1_problem):
    return biot.assemble_operators(setup1_problem)
