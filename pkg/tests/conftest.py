import numpy as np
import pytest

from swapcon.flowdata import SplitConfig, chronological_split, drifted_table
from swapcon.scenarios import kyoto_like_spec


@pytest.fixture(scope="session")
def small_table():
    return drifted_table(kyoto_like_spec(seed=0, records_per_period=(3000, 800, 800)))


@pytest.fixture(scope="session")
def small_splits(small_table):
    return chronological_split(small_table, SplitConfig(test_per_class=150, seed=0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
