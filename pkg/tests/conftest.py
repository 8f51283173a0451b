import numpy as np
import pytest

from abx.simulate import default_config, generate_traffic
from abx.taxonomy import default_taxonomy


@pytest.fixture(scope="session")
def taxonomy():
    return default_taxonomy()


@pytest.fixture(scope="session")
def small_traffic():
    """A few thousand users of default traffic, bots included."""
    return generate_traffic(default_config(n_users=4000, seed=7))


@pytest.fixture(scope="session")
def small_sessions(small_traffic):
    return small_traffic.session_frame()


@pytest.fixture
def rng():
    return np.random.default_rng(20160406)
