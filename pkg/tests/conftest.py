import numpy as np
import pytest

from delayhjb.config import calibration_scenario, default_scenario


@pytest.fixture
def default_cfg():
    return default_scenario()


@pytest.fixture
def calib_cfg():
    return calibration_scenario()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
