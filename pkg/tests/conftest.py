import numpy as np
import pytest

from dacs.models.samples import CalibrationSample, TestSample
from dacs.models.state import build_score_state


@pytest.fixture
def small_calib():
    # scores 0.9, inf, 0.3, inf
    return [
        CalibrationSample(z=1, mu_hat=-0.9, y=-1.0),
        CalibrationSample(z=2, mu_hat=0.2, y=1.0),
        CalibrationSample(z=1, mu_hat=-0.3, y=-0.5),
        CalibrationSample(z=2, mu_hat=0.4, y=2.0),
    ]


@pytest.fixture
def small_test():
    # scores 0.1, 0.5, 0.7, 1.2
    return [
        TestSample(z=1, mu_hat=-0.1),
        TestSample(z=2, mu_hat=-0.5),
        TestSample(z=1, mu_hat=-0.7),
        TestSample(z=2, mu_hat=-1.2),
    ]


@pytest.fixture
def small_state(small_calib, small_test):
    return build_score_state(small_calib, small_test)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
