import itertools
import time

import numpy as np
import pytest

from dacs.engine.conformal import bh_stopping_time, e_values_at, is_self_consistent
from dacs.engine.diversity import Underrep
from dacs.engine.pipeline import selection_diversity
from dacs.engine.stopping import support_range
from dacs.engine.underrep import (
    CategoryCounts,
    budget,
    greedy_underrep_select,
    min_survival_fft,
    survival_for_draws,
    underrep_opt_value,
    underrep_reward,
    underrep_reward_table,
)
from dacs.harness.oracles import best_self_consistent_underrep, multivariate_hypergeom_min_survival
from dacs.harness.simulate import get_setting, simulate
from dacs.models.state import build_score_state

from helpers import make_categorical_samples


def brute_force_reward(t, s, position_codes, alpha, n, m, n_categories):
    """Average optimal value over every placement of the n - s calibration points among 1..t."""
    values = []
    for calib_positions in itertools.combinations(range(t), n - s):
        is_test = np.ones(t, dtype=bool)
        is_test[list(calib_positions)] = False
        counts = np.bincount(position_codes[:t][is_test], minlength=n_categories)
        values.append(underrep_opt_value(t, s, counts, n_categories, alpha, n, m))
    return float(np.mean(values))


def counts_from_codes(codes, n_categories):
    onehot = np.zeros((len(codes), n_categories), dtype=int)
    onehot[np.arange(len(codes)), codes] = 1
    pooled = np.vstack([np.zeros((1, n_categories), dtype=int), np.cumsum(onehot, axis=0)])
    return CategoryCounts(pooled=pooled, test_below=np.zeros_like(pooled))


class TestOptValue:
    def test_balanced_counts(self):
        assert underrep_opt_value(6, 2, [2, 2], 2, 0.6, 4, 4) == pytest.approx(0.5)

    def test_infeasible_budget(self):
        assert underrep_opt_value(6, 2, [2, 2], 2, 0.5, 4, 4) == -0.5

    def test_unbalanced_counts(self):
        assert budget(6, 2, 0.6, 4, 4).K == 4
        assert underrep_opt_value(6, 2, [1, 3], 2, 0.6, 4, 4) == pytest.approx(0.25)

    def test_budget_on_small_fixture(self):
        params = budget(6, 2, 0.6, 4, 4)
        assert params.rho == pytest.approx(2.0)


class TestMinSurvival:
    def test_small_urn(self):
        np.testing.assert_allclose(min_survival_fft([3, 2], 3, 1), [0.9])

    @pytest.mark.parametrize("k", [1, 3, 7])
    def test_forced_full_draw(self, k):
        assert min_survival_fft([k, k], 2 * k, k)[k - 1] == pytest.approx(1.0)

    def test_zero_draws(self):
        np.testing.assert_array_equal(min_survival_fft([4, 5], 0, 3), [0.0, 0.0, 0.0])

    def test_invalid_draws(self):
        with pytest.raises(ValueError):
            min_survival_fft([2, 2], 5, 1)

    def test_matches_exact_enumeration(self, rng):
        for _ in range(60):
            C = int(rng.integers(2, 5))
            counts = rng.integers(1, 31, size=C)
            draws = int(rng.integers(0, counts.sum() + 1))
            nu_max = int(counts.min()) + 2
            np.testing.assert_allclose(
                min_survival_fft(counts, draws, nu_max),
                multivariate_hypergeom_min_survival(counts, draws, nu_max),
                atol=1e-9,
            )

    def test_batched_draws_match_single_calls(self):
        counts = [40, 55, 30]
        draws = list(range(3, 120, 7))
        batched = survival_for_draws(counts, draws, 25)
        for d in draws:
            np.testing.assert_allclose(batched[d], min_survival_fft(counts, d, 25), atol=1e-9)


class TestReward:
    def test_small_instance(self):
        codes = np.array([0, 1, 0, 1])
        counts = counts_from_codes(codes, 2)
        expected = brute_force_reward(4, 3, codes, 0.6, 4, 4, 2)
        assert expected == pytest.approx(1 / 3)
        assert underrep_reward(4, 3, counts, 0.6, 4, 4, 2) == pytest.approx(expected, abs=1e-12)

    def test_infeasible_cell(self):
        counts = counts_from_codes(np.array([0, 1, 0, 1]), 2)
        # four calibration points below t=4 leave no test point to select
        assert underrep_reward(4, 0, counts, 0.6, 4, 4, 2) == -0.5

    def test_matches_brute_force_expectation(self, rng):
        for _ in range(40):
            C = int(rng.integers(2, 4))
            n, m = int(rng.integers(2, 7)), int(rng.integers(2, 7))
            codes = rng.integers(0, C, size=n + m)
            counts = counts_from_codes(codes, C)
            tau = int(rng.integers(1, n + m + 1))
            N_tau = int(rng.integers(max(0, n - tau), n + 1))
            alpha = float(rng.uniform(0.3, 0.9))
            t = int(rng.integers(1, tau + 1))
            lo, hi = support_range(t, tau, N_tau, n)
            for s in range(lo, hi + 1):
                assert underrep_reward(t, s, counts, alpha, n, m, C) == pytest.approx(
                    brute_force_reward(t, s, codes, alpha, n, m, C), abs=1e-10
                )

    def test_table_rows_match_single_cells(self, rng):
        calib, test = make_categorical_samples(rng, 25, 20, n_categories=3, shift=0.8)
        state = build_score_state(calib, test)
        tau = bh_stopping_time(state, 0.5)
        assert tau > 0
        table = underrep_reward_table(state, tau, 0.5, 3)
        counts = CategoryCounts.from_state(state, 3)
        for t, s in table.cells():
            assert table.get(t, s) == pytest.approx(underrep_reward(t, s, counts, 0.5, state.n, state.m, 3), abs=1e-10)


def test_category_counts_from_small_fixture(small_state):
    counts = CategoryCounts.from_state(small_state, 2)
    np.testing.assert_array_equal(counts.pooled[6], [4, 2])
    np.testing.assert_array_equal(counts.test_below[6], [2, 2])
    np.testing.assert_array_equal(counts.test_below[8], [2, 2])


class TestGreedySelect:
    def test_small_fixture(self, small_state):
        selected = greedy_underrep_select(small_state, 6, 0.6, 2)
        np.testing.assert_array_equal(selected, [0, 1, 2, 3])
        assert selection_diversity(Underrep(2), selected, small_state) == pytest.approx(0.5)

    def test_infeasible_budget(self, small_state):
        assert greedy_underrep_select(small_state, 1, 0.6, 2).size == 0

    def test_matches_exhaustive_search(self, rng):
        checked = 0
        while checked < 150:
            C = int(rng.integers(2, 4))
            calib, test = make_categorical_samples(rng, int(rng.integers(1, 9)), int(rng.integers(1, 9)), C, shift=0.5)
            state = build_score_state(calib, test)
            alpha = float(rng.uniform(0.2, 0.9))
            tau_bh = bh_stopping_time(state, alpha)
            if tau_bh == 0:
                continue
            tau = int(rng.integers(1, tau_bh + 1))
            selected = greedy_underrep_select(state, tau, alpha, C)
            assert is_self_consistent(selected, e_values_at(state, tau), alpha, state.m)
            assert selection_diversity(Underrep(C), selected, state) == best_self_consistent_underrep(state, tau, alpha, C)
            checked += 1


@pytest.mark.slow
def test_full_reward_table_at_six_hundred_points():
    setting = get_setting("u1", n_calib=360, n_test=240)
    data = simulate(setting, 17)
    state = build_score_state(data.calib, data.test)
    alpha = 0.5
    tau_bh = bh_stopping_time(state, alpha)
    assert tau_bh > 0
    start = time.perf_counter()
    table = underrep_reward_table(state, tau_bh, alpha, setting.n_categories)
    assert time.perf_counter() - start < 60
    assert table.grid.size == tau_bh
