import numpy as np
import pytest

from rvmlab.distribution import FamilySpec, a_square, skewed
from rvmlab.geometry import MeridianDomain, build_grid
from rvmlab.moments import MomentQuadrature


@pytest.fixture(scope="session")
def torus():
    return MeridianDomain(1.0, 2.0, 0.0, 1.0)


@pytest.fixture(scope="session")
def grid(torus):
    return build_grid(torus, 17, 17)


@pytest.fixture(scope="session")
def quad():
    return MomentQuadrature()


@pytest.fixture(scope="session")
def ion_spec():
    return FamilySpec("case1", mu_plus=skewed(), a_plus=a_square)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
