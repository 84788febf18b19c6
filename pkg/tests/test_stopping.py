import itertools
import math

import numpy as np
import pandas as pd
import pytest

from dacs.engine.stopping import (
    StageTable,
    build_grid,
    coarse_snell,
    dump_tables_csv,
    exchangeability_gap,
    mc_reward,
    optimal_stopping_time,
    snell_envelope,
    support_range,
    transition_weights,
    uniform_membership,
)
from dacs.engine.underrep import underrep_reward_table
from dacs.errors import MissingCell
from dacs.harness.oracles import exhaustive_snell


def random_table(rng, grid, tau, N_tau, n):
    table = StageTable.empty(grid, tau, N_tau, n)
    for q in range(len(table.rows)):
        table.rows[q] = rng.uniform(-1, 1, table.rows[q].size)
    return table


class TestSupportRange:
    @pytest.mark.parametrize(
        "t, expected",
        [(4, (2, 4)), (1, (3, 4)), (6, (2, 2))],
    )
    def test_small_fixture(self, t, expected):
        assert support_range(t, 6, 2, 4) == expected

    def test_out_of_range(self):
        with pytest.raises(ValueError):
            support_range(0, 6, 2, 4)


class TestStageTable:
    def test_get_and_missing_cells(self):
        table = StageTable.empty(np.arange(1, 7), 6, 2, 4)
        with pytest.raises(MissingCell):
            table.get(4, 3)
        table.set(4, 3, 0.25)
        assert table.get(4, 3) == 0.25
        with pytest.raises(MissingCell):
            table.get(4, 5)
        with pytest.raises(MissingCell):
            table.get(7, 2)

    def test_cell_count(self):
        table = StageTable.empty(np.arange(1, 7), 6, 2, 4)
        assert table.n_cells() == sum(hi - lo + 1 for lo, hi in zip(table.lo, table.hi))
        assert len(list(table.cells())) == table.n_cells()

    def test_grid_must_span_one_to_tau(self):
        with pytest.raises(ValueError):
            StageTable.empty(np.array([2, 6]), 6, 2, 4)


class TestTransitionWeights:
    def test_rows_sum_to_one(self):
        for gap in (1, 2, 4):
            s_now = np.arange(2, 5)
            s_prev = np.arange(2, 5 + gap)
            W = transition_weights(6, 6 - gap, s_now, s_prev, 4)
            np.testing.assert_allclose(W.sum(axis=1), 1.0)

    def test_unit_gap_is_bernoulli(self):
        W = transition_weights(5, 4, np.array([2]), np.array([2, 3]), 4)
        np.testing.assert_allclose(W, [[3 / 5, 2 / 5]])

    def test_hypergeometric_gap(self):
        # t=6, n - s = 3 calibration points among 6 positions, 3 revealed
        W = transition_weights(6, 3, np.array([1]), np.arange(1, 5), 4)
        expected = [math.comb(3, k) * math.comb(3, 3 - k) / math.comb(6, 3) for k in range(4)]
        np.testing.assert_allclose(W[0], expected)


class TestSnellEnvelope:
    def test_single_time(self):
        table = StageTable.empty(np.array([1]), 1, 0, 1)
        table.rows[0][:] = 0.7
        snell = snell_envelope(table, 1)
        np.testing.assert_array_equal(snell.rows[0], table.rows[0])

    def test_constant_rewards(self):
        table = StageTable.empty(np.arange(1, 7), 6, 2, 4)
        for row in table.rows:
            row[:] = 0.3
        snell = snell_envelope(table, 4)
        for row in snell.rows:
            np.testing.assert_allclose(row, 0.3)

    def test_matches_tree_enumeration(self, rng):
        for _ in range(60):
            tau = int(rng.integers(1, 13))
            n = int(rng.integers(1, 12))
            ones = int(rng.integers(0, min(n, tau) + 1))
            rewards = random_table(rng, np.arange(1, tau + 1), tau, n - ones, n)
            snell = snell_envelope(rewards, n)
            for (t, s), value in exhaustive_snell(rewards, n, tau, n - ones).items():
                assert snell.get(t, s) == pytest.approx(value, abs=1e-10)

    def test_fine_envelope_rejects_gaps(self, rng):
        rewards = random_table(rng, np.array([1, 3, 6]), 6, 2, 4)
        with pytest.raises(ValueError):
            snell_envelope(rewards, 4)

    def test_missing_reward(self):
        with pytest.raises(MissingCell):
            snell_envelope(StageTable.empty(np.arange(1, 4), 3, 1, 2), 2)


class TestCoarseSnell:
    def test_unit_gap_grid_is_identical(self, rng):
        rewards = random_table(rng, np.arange(1, 9), 8, 3, 6)
        fine, coarse = snell_envelope(rewards, 6), coarse_snell(rewards, 6)
        for a, b in zip(fine.rows, coarse.rows):
            np.testing.assert_array_equal(a, b)

    def test_two_point_grid(self, rng):
        tau, N_tau, n = 7, 2, 5
        rewards = random_table(rng, np.array([1, tau]), tau, N_tau, n)
        snell = coarse_snell(rewards, n)
        # hypergeometric mixture over the calibration count among positions 2..tau
        expected = 0.0
        for k in range(0, tau):
            ways = math.comb(n - N_tau, k) * math.comb(tau - (n - N_tau), (tau - 1) - k) / math.comb(tau, tau - 1)
            if ways > 0:
                expected += ways * rewards.get(1, N_tau + k)
        assert snell.get(tau, N_tau) == pytest.approx(max(rewards.get(tau, N_tau), expected))


class TestOptimalStoppingTime:
    def test_stops_immediately_when_reward_is_envelope(self):
        rewards = StageTable.empty(np.arange(1, 7), 6, 2, 4)
        for row in rewards.rows:
            row[:] = 1.0
        snell = snell_envelope(rewards, 4)
        observed = np.array([4, 4, 3, 3, 3, 2, 2, 1, 0])
        assert optimal_stopping_time(rewards, snell, observed) == 6

    def test_forced_stop_at_one(self):
        rewards = StageTable.empty(np.arange(1, 7), 6, 2, 4)
        for q, row in enumerate(rewards.rows):
            row[:] = 10.0 if q == 0 else -1.0
        snell = snell_envelope(rewards, 4)
        observed = np.array([4, 4, 3, 3, 3, 2, 2, 1, 0])
        assert optimal_stopping_time(rewards, snell, observed) == 1

    def test_small_fixture_with_underrep_rewards(self, small_state):
        rewards = underrep_reward_table(small_state, 6, 0.6, 2)
        snell = snell_envelope(rewards, 4)
        tau_star = optimal_stopping_time(rewards, snell, small_state.calib_above)
        brute = exhaustive_snell(rewards, 4, 6, 2)
        expected = max(
            t for t in range(1, 7)
            if rewards.get(t, int(small_state.calib_above[t])) >= brute[(t, int(small_state.calib_above[t]))]
        )
        assert tau_star == expected
        # four test points in two categories drawn from pooled counts (4, 2)
        assert rewards.get(6, 2) == pytest.approx(0.4 * 0.5 + (8 / 15) / 4)


class TestBuildGrid:
    def test_full_grid(self):
        np.testing.assert_array_equal(build_grid(6, 6), np.arange(1, 7))

    def test_even_spacing(self):
        np.testing.assert_array_equal(build_grid(101, 3), [1, 51, 101])

    def test_capped(self):
        np.testing.assert_array_equal(build_grid(5, 100), np.arange(1, 6))

    def test_endpoints_and_size(self):
        for tau in range(2, 60):
            for q in range(2, 12):
                grid = build_grid(tau, q)
                assert grid[0] == 1 and grid[-1] == tau
                assert len(grid) <= q
                assert np.all(np.diff(grid) > 0)


class TestMonteCarloReward:
    def test_constant_value(self):
        assert mc_reward(5, 2, lambda b, rng: 0.4, L=7, n=4) == pytest.approx(0.4)

    def test_singleton_support(self):
        # s = n: no calibration points below t, so every draw is the all-test vector
        value = mc_reward(4, 4, lambda b, rng: float(b.sum()), L=1, n=4)
        assert value == 0.0

    def test_membership_draw(self, rng):
        b = uniform_membership(rng, 9, 4)
        assert b.size == 9 and b.sum() == 4

    def test_converges_to_exact_average(self):
        t, s, n = 6, 3, 5
        ones = n - s

        def value(b, rng):
            return float(np.flatnonzero(b == 0)[0])

        exact = []
        for pos in itertools.combinations(range(t), ones):
            b = np.zeros(t, dtype=int)
            b[list(pos)] = 1
            exact.append(value(b, None))
        mean, sd = np.mean(exact), np.std(exact)
        L = 4000
        assert abs(mc_reward(t, s, value, L=L, n=n, master_seed=5) - mean) < 4 * sd / math.sqrt(L)

    def test_same_seed_same_value(self):
        fn = lambda b, rng: float(np.argmax(b)) + rng.random()
        assert mc_reward(6, 3, fn, 20, 5, master_seed=9) == mc_reward(6, 3, fn, 20, 5, master_seed=9)


def test_exchangeability_gap(small_state):
    # expected N_t = 4 - 2t/6; realized (N_1..N_6) = (4, 3, 3, 3, 2, 2)
    t = np.arange(1, 7)
    expected = 4 - 2 * t / 6
    realized = np.array([4, 3, 3, 3, 2, 2])
    assert exchangeability_gap(small_state, 6) == pytest.approx(np.max(np.abs(realized - expected)))
    assert exchangeability_gap(small_state, 0) == 0.0


def test_dump_tables_csv(small_state, tmp_path):
    rewards = underrep_reward_table(small_state, 6, 0.6, 2)
    snell = snell_envelope(rewards, 4)
    path = tmp_path / "tables.csv"
    dump_tables_csv(rewards, snell, str(path))
    frame = pd.read_csv(path)
    assert list(frame.columns) == ["t", "s", "R", "E"]
    assert len(frame) == rewards.n_cells()
    assert np.all(frame["E"] >= frame["R"] - 1e-12)
