import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from hyperspin.reference import EU151_SITE1, EU151_SITE1_FRAME
from hyperspin.spectra import SpiralScan, observe_spiral

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def site():
    return EU151_SITE1


@pytest.fixture(scope="session")
def site_frame():
    return EU151_SITE1_FRAME


@pytest.fixture(scope="session")
def spiral():
    return SpiralScan(200, 10.0, 10.0, 5.0)


@pytest.fixture(scope="session")
def noiseless_obs(site, spiral):
    return observe_spiral(site, spiral, noise=0.0, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
