import numpy as np
import pytest

from qblue.config import get_settings
from qblue.services.quantizer import make_uniform


@pytest.fixture
def spec10():
    """10-bit uniform quantizer over [-1, 1)."""
    return make_uniform(10, (-1.0, 1.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def fresh_settings():
    """Re-read settings from the environment for the duration of a test."""
    get_settings.cache_clear()
    yield get_settings
    get_settings.cache_clear()
