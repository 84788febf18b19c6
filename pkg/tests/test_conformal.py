import numpy as np
import pytest

from dacs.engine.conformal import (
    bh_selection_p_values,
    bh_stopping_time,
    conformal_p_values,
    cs_selection,
    e_values_at,
    is_self_consistent,
)
from dacs.models.samples import CalibrationSample, TestSample
from dacs.models.state import build_score_state

from helpers import make_categorical_samples


def test_p_values_on_small_fixture(small_state):
    p = conformal_p_values(small_state)
    np.testing.assert_allclose(p, [1 / 5, 2 / 5, 2 / 5, 3 / 5])


def test_p_values_when_every_calibration_score_is_infinite():
    calib = [CalibrationSample(z=1, mu_hat=0.0, y=1.0) for _ in range(3)]
    test = [TestSample(z=1, mu_hat=m) for m in (0.1, 0.2)]
    np.testing.assert_allclose(conformal_p_values(build_score_state(calib, test)), [1 / 4, 1 / 4])


@pytest.mark.parametrize("alpha, expected", [(0.6, 6), (0.5, 0)])
def test_bh_stopping_time_on_small_fixture(small_state, alpha, expected):
    assert bh_stopping_time(small_state, alpha) == expected


def test_bh_stopping_time_on_all_test_prefix():
    # three test points below every calibration point: t = m gives (m/(n+1))/m <= alpha
    calib = [CalibrationSample(z=1, mu_hat=-5.0 - i, y=-1.0) for i in range(4)]
    test = [TestSample(z=1, mu_hat=m) for m in (1.0, 2.0, 3.0)]
    state = build_score_state(calib, test)
    np.testing.assert_array_equal(state.membership[:3], [0, 0, 0])
    assert bh_stopping_time(state, 0.2) == 3


class TestEValues:
    def test_at_bh_time(self, small_state):
        e = e_values_at(small_state, 6)
        np.testing.assert_allclose(e.values, [5 / 3] * 4)
        assert e.denom == 3

    def test_at_first_rank(self, small_state):
        e = e_values_at(small_state, 1)
        np.testing.assert_allclose(e.values, [5.0, 0.0, 0.0, 0.0])
        np.testing.assert_array_equal(e.support, [0])

    def test_no_test_ranked_yet(self):
        calib = [CalibrationSample(z=1, mu_hat=1.0, y=-1.0)]
        test = [TestSample(z=1, mu_hat=-2.0)]
        e = e_values_at(build_score_state(calib, test), 1)
        np.testing.assert_array_equal(e.values, [0.0])

    def test_positive_e_values_stay_positive(self, rng):
        for _ in range(20):
            calib, test = make_categorical_samples(rng, int(rng.integers(1, 30)), int(rng.integers(1, 15)), shift=0.5)
            state = build_score_state(calib, test)
            previous = e_values_at(state, 1).values > 0
            for t in range(2, state.size + 1):
                current = e_values_at(state, t).values > 0
                assert np.all(current[previous])
                previous = current

    def test_out_of_range_time(self, small_state):
        with pytest.raises(ValueError):
            e_values_at(small_state, 0)
        with pytest.raises(ValueError):
            e_values_at(small_state, 9)


class TestSelfConsistency:
    def test_equality_boundary_passes(self, small_state):
        e = e_values_at(small_state, 6)
        assert is_self_consistent([0, 1, 2, 3], e, 0.6, 4)

    def test_empty_set(self, small_state):
        assert is_self_consistent([], e_values_at(small_state, 6), 0.6, 4)

    def test_singleton_fails(self, small_state):
        assert not is_self_consistent([0], e_values_at(small_state, 6), 0.6, 4)


@pytest.mark.parametrize("alpha, expected", [(0.6, [0, 1, 2, 3]), (0.5, [])])
def test_cs_selection_on_small_fixture(small_state, alpha, expected):
    np.testing.assert_array_equal(cs_selection(small_state, alpha), expected)


def test_cs_selects_nothing_without_signal():
    calib = [CalibrationSample(z=1, mu_hat=10.0 + i, y=-1.0) for i in range(10)]
    test = [TestSample(z=1, mu_hat=-10.0 - i) for i in range(5)]
    assert cs_selection(build_score_state(calib, test), 0.2).size == 0


def test_cs_matches_bh_on_p_values(rng):
    for _ in range(50):
        calib, test = make_categorical_samples(rng, int(rng.integers(1, 30)), int(rng.integers(1, 20)), shift=0.5)
        state = build_score_state(calib, test)
        alpha = float(rng.uniform(0.05, 0.9))
        np.testing.assert_array_equal(
            np.sort(cs_selection(state, alpha)),
            bh_selection_p_values(conformal_p_values(state), alpha),
        )
