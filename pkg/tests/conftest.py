import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=200, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@pytest.fixture(scope="session")
def scene():
    from patchforge.synthetic import make_scene

    return make_scene(256, pixel_size=0.5, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
