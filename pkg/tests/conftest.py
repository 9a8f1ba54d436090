import numpy as np
import pytest

from pitpinn.physics import PhysicalParams, nondimensionalize
from pitpinn.scenarios import DEFAULT_L_C, DEFAULT_T_C, builtin_scenario


@pytest.fixture(scope="session")
def phys():
    return PhysicalParams()


@pytest.fixture(scope="session")
def nd(phys):
    return nondimensionalize(phys, DEFAULT_L_C, DEFAULT_T_C)


@pytest.fixture(scope="session")
def scen2():
    return builtin_scenario("2d-2pit")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
