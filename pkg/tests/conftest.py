import numpy as np
import pytest

from boundary_le.billiard import default_table
from boundary_le.walk import ssrw_model


@pytest.fixture(scope="session")
def table():
    return default_table()


@pytest.fixture(scope="session")
def ssrw():
    return ssrw_model()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
