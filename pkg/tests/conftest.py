"""Session-wide simulation runs shared by the acceptance tests."""

import pytest

from ccdinject import profiles
from ccdinject.experiments import distance_sweep, frequency_sweep, power_sweep


@pytest.fixture(scope="session")
def wide_sweep():
    return frequency_sweep(profiles.frequency_plan(profiles.dfm_auto()))


@pytest.fixture(scope="session")
def narrow_sweep():
    return frequency_sweep(profiles.frequency_plan(profiles.cctv_desk()))


@pytest.fixture(scope="session")
def power_rows():
    return power_sweep(profiles.power_plan())


@pytest.fixture(scope="session")
def distance_rows():
    return distance_sweep(profiles.distance_plan())
