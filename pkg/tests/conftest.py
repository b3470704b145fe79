import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from geoanchor.synthetic import make_corpus

settings.register_profile(
    "ci", max_examples=200, deadline=None, derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "ci"))


@pytest.fixture(scope="session")
def corpus():
    return make_corpus(50, seed=0)


@pytest.fixture(scope="session")
def small_corpus(corpus):
    return corpus[:6]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
