import pytest

from fiberdis.base_dynamics import invariant_density
from fiberdis.catalog import get_system


@pytest.fixture(scope="session")
def pure():
    return get_system("doubling-pure")


@pytest.fixture(scope="session")
def cos():
    return get_system("doubling-cos")


@pytest.fixture(scope="session")
def digit():
    return get_system("doubling-digit")


@pytest.fixture(scope="session")
def gauss():
    return get_system("gauss-affine")


@pytest.fixture(scope="session")
def phi_doubling(pure):
    return invariant_density(pure.base)


@pytest.fixture(scope="session")
def phi_gauss(gauss):
    return invariant_density(gauss.base)
