import itertools
from collections import Counter

import numpy as np
import pytest
from scipy.stats import chisquare

from dacs.engine.diversity import Markowitz, Sharpe, SimilarityMatrix, Underrep, eval_set, rbf_similarity
from dacs.engine.relaxed import (
    CoupledPath,
    RelaxedProgram,
    baseline_relaxed_solutions,
    carry_warm_start,
    couple_down,
    randomized_round,
    relaxed_opt_value,
    relaxed_reward_table,
    solve_relaxed,
    sorted_sigma,
    warm_start_schedule,
)
from dacs.engine.solvers import PgdConfig, project_rsc
from dacs.engine.stopping import StageTable, build_grid
from dacs.errors import NoFlippableOne, UnsupportedRelaxation
from dacs.harness.oracles import relaxed_program_by_slsqp
from dacs.models.state import build_score_state

from helpers import make_vector_samples

TIGHT = PgdConfig(tol=1e-13, patience=20, max_iters=50_000)


def random_sigma(rng, p):
    z = rng.normal(size=(p, 2))
    sq = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=2)
    return SimilarityMatrix.regularized(np.exp(-sq / 2) + 0.05 * np.eye(p))


class TestCoupling:
    def test_last_bit_one_is_dropped(self, rng):
        np.testing.assert_array_equal(couple_down(np.array([1, 0, 1, 1]), rng), [1, 0, 1])

    def test_flip_is_uniform_over_ones(self, rng):
        outcomes = Counter(tuple(couple_down(np.array([1, 0, 1, 0]), rng)) for _ in range(4000))
        assert set(outcomes) == {(0, 0, 1), (1, 0, 0)}
        assert abs(outcomes[(0, 0, 1)] / 4000 - 0.5) < 0.05

    def test_no_flippable_one(self, rng):
        with pytest.raises(NoFlippableOne):
            couple_down(np.array([0, 0, 0]), rng)

    def test_coupled_draw_is_uniform(self, rng):
        # a uniform length-6 vector with three ones maps to a uniform length-5 vector with two
        counts = Counter()
        for _ in range(12_000):
            b_next = np.zeros(6, dtype=int)
            b_next[rng.choice(6, size=3, replace=False)] = 1
            counts[tuple(couple_down(b_next, rng))] += 1
        assert all(sum(c) == 2 for c in counts)
        assert len(counts) == 10
        assert chisquare(list(counts.values())).pvalue > 1e-3

    def test_carry_warm_start(self):
        chi_next = np.array([0.1, 0.2, 0.3, 0.9])
        np.testing.assert_allclose(carry_warm_start(chi_next, 1), [0.1, 0.9, 0.3])
        np.testing.assert_allclose(carry_warm_start(chi_next, None), [0.1, 0.2, 0.3])


class TestSolveRelaxed:
    def test_no_active_points(self):
        program = RelaxedProgram.at_cell(Markowitz(SimilarityMatrix(np.eye(3)), 1.0), np.ones(3), 0.5, 3, 3, np.eye(3))
        solution = solve_relaxed(program)
        assert solution.chi.size == 0 and not solution.feasible

    def test_infeasible_program_returns_zero(self):
        sigma = np.eye(3)
        program = RelaxedProgram(Markowitz(SimilarityMatrix(sigma), 1.0), beta=0.1, active=np.arange(3), sigma=sigma, alpha=0.5, m=10)
        solution = solve_relaxed(program)
        np.testing.assert_array_equal(solution.chi, np.zeros(3))
        assert solution.objective == 0.0

    def test_small_fixture_selects_everything(self, small_state):
        metric = Markowitz(SimilarityMatrix(np.eye(8)), 1e-6)
        program = RelaxedProgram.at_cell(metric, small_state.membership[:6], 0.6, 4, 4, np.eye(8))
        assert program.kappa == pytest.approx(0.25)
        assert program.feasible
        np.testing.assert_allclose(solve_relaxed(program).chi, np.ones(4), atol=1e-6)

    @pytest.mark.parametrize("kind", ["sharpe", "markowitz"])
    def test_matches_slsqp_oracle(self, rng, kind):
        for _ in range(15):
            p = int(rng.integers(2, 7))
            sigma = random_sigma(rng, p)
            metric = Sharpe(sigma) if kind == "sharpe" else Markowitz(sigma, float(rng.uniform(0.2, 1.5)))
            kappa = float(rng.uniform(1.0 / p, 1.0))
            program = RelaxedProgram(metric, beta=kappa * 20 / 0.3, active=np.arange(p), sigma=sigma.entries, alpha=0.3, m=20)
            cold = solve_relaxed(program, pgd=TIGHT)
            warm = solve_relaxed(program, warm_start=rng.uniform(0, 1, p), pgd=TIGHT)
            assert cold.objective == pytest.approx(relaxed_program_by_slsqp(metric, sigma.entries, kappa), abs=1e-5)
            assert warm.objective == pytest.approx(cold.objective, abs=1e-6)
            chi = cold.chi
            assert np.all(chi >= -1e-9) and np.all(chi <= 1 + 1e-9)
            if kind == "sharpe":
                assert chi.max() == pytest.approx(1.0)

    def test_underrep_has_no_program(self, small_state):
        with pytest.raises(UnsupportedRelaxation):
            RelaxedProgram.at_cell(Underrep(2), small_state.membership[:6], 0.6, 4, 4, np.eye(8))


class TestRelaxedOptValue:
    def test_all_calibration_prefix(self):
        metric = Sharpe(SimilarityMatrix(np.eye(4)))
        value, chi = relaxed_opt_value(2, np.array([1, 1, 0, 0]), metric, 0.5, 2, 2, np.eye(4))
        assert value == metric.empty_value
        np.testing.assert_array_equal(chi, [0.0, 0.0])

    def test_binary_solution_gives_set_value(self, small_state):
        metric = Markowitz(SimilarityMatrix(np.eye(8)), 1e-6)
        value, chi = relaxed_opt_value(6, small_state.membership, metric, 0.6, 4, 4, np.eye(8))
        active = np.flatnonzero(small_state.membership[:6] == 0)
        np.testing.assert_allclose(chi[active], 1.0, atol=1e-6)
        assert value == pytest.approx(eval_set(metric, active), abs=1e-5)

    def test_markowitz_value_matches_enumerated_rounding(self, rng):
        sigma = random_sigma(rng, 6)
        metric = Markowitz(sigma, 0.8)
        b = np.array([0, 1, 0, 0, 1, 0])
        value, chi = relaxed_opt_value(6, b, metric, 0.8, 4, 4, sigma.entries, pgd=TIGHT)
        exact = 0.0
        for bits in itertools.product((0, 1), repeat=6):
            xi = np.array(bits, dtype=float)
            prob = np.prod(np.where(xi == 1, chi, 1 - chi))
            exact += prob * (xi.sum() - 0.4 * xi @ sigma.entries @ xi)
        assert value == pytest.approx(exact, abs=1e-10)


class TestWarmStartSchedule:
    def test_single_time(self):
        paths = warm_start_schedule(1, 2, 3, [1])
        assert len(paths) == 1 and paths[0].cells == [(1, 2)]

    def test_small_fixture_covers_every_cell_once(self):
        table = StageTable.empty(np.arange(1, 7), 6, 2, 4)
        paths = warm_start_schedule(6, 2, 4, table.grid)
        cells = [cell for path in paths for cell in path.cells]
        assert len(cells) == table.n_cells()
        assert set(cells) == set(table.cells())

    def test_coarse_grid_paths_step_by_gap(self):
        grid = build_grid(20, 4)
        for path in warm_start_schedule(20, 5, 12, grid):
            for (t0, s0), (t1, s1) in zip(path.cells, path.cells[1:]):
                assert t1 < t0 and s1 - s0 == t0 - t1

    def test_walk_keeps_membership_counts(self):
        grid = build_grid(20, 4)
        for path in warm_start_schedule(20, 5, 12, grid):
            for t, s, b, flips, _ in path.walk(12, master_seed=3, ell=0):
                assert b.size == t and int(b.sum()) == 12 - s

    def test_walk_is_reproducible(self):
        path = CoupledPath(cells=[(10, 6), (7, 9), (4, 12)])
        first = [b.copy() for _, _, b, _, _ in path.walk(12, 5, 2)]
        second = [b.copy() for _, _, b, _, _ in path.walk(12, 5, 2)]
        for a, b in zip(first, second):
            np.testing.assert_array_equal(a, b)


class TestRandomizedRound:
    def test_zero_and_binary(self, rng):
        assert randomized_round(np.zeros(5), rng).size == 0
        np.testing.assert_array_equal(randomized_round(np.array([1.0, 0.0, 1.0]), rng), [0, 2])

    def test_half_weights_are_uniform_over_subsets(self, rng):
        draws = 20_000
        counts = Counter(tuple(randomized_round(np.full(4, 0.5), rng)) for _ in range(draws))
        assert len(counts) == 16
        assert chisquare(list(counts.values())).pvalue > 1e-3


class TestRewardTable:
    @pytest.fixture
    def relaxed_case(self, rng):
        calib, test = make_vector_samples(rng, 14, 10)
        state = build_score_state(calib, test)
        z = np.asarray([s.z for s in calib] + [s.z for s in test])
        return state, Markowitz(rbf_similarity(z), 0.5)

    def test_every_cell_filled_and_reproducible(self, relaxed_case):
        state, metric = relaxed_case
        tau = 12
        grid = build_grid(tau, 5)
        first = relaxed_reward_table(state, metric, 0.5, grid, tau, L=4, master_seed=7)
        second = relaxed_reward_table(state, metric, 0.5, grid, tau, L=4, master_seed=7)
        for t, s in first.cells():
            assert first.get(t, s) == second.get(t, s)

    def test_parallel_matches_serial(self, relaxed_case):
        state, metric = relaxed_case
        tau = 10
        grid = build_grid(tau, 4)
        serial = relaxed_reward_table(state, metric, 0.5, grid, tau, L=3, master_seed=1, workers=1)
        parallel = relaxed_reward_table(state, metric, 0.5, grid, tau, L=3, master_seed=1, workers=2)
        for a, b in zip(serial.rows, parallel.rows):
            np.testing.assert_array_equal(a, b)

    def test_cold_start_fills_table(self, relaxed_case):
        state, metric = relaxed_case
        table = relaxed_reward_table(state, metric, 0.5, build_grid(8, 3), 8, L=2, warm_start=False)
        assert not any(np.isnan(row).any() for row in table.rows)

    def test_sorted_sigma_follows_score_order(self, relaxed_case):
        state, metric = relaxed_case
        sigma = sorted_sigma(state, metric)
        i, j = state.origin[0], state.origin[1]
        assert sigma[0, 1] == metric.sigma.entries[i, j]

    def test_baseline_solutions(self, relaxed_case):
        state, metric = relaxed_case
        solutions = baseline_relaxed_solutions(state, metric, 0.5, 6)
        assert [chi.size for chi in solutions] == list(range(1, 7))
        for t, chi in enumerate(solutions, start=1):
            np.testing.assert_array_equal(chi[state.membership[:t] == 1], 0.0)


class TestFeasibleSetNesting:
    def test_damped_feasible_points_stay_feasible(self, rng):
        checked = 0
        while checked < 200:
            t = int(rng.integers(2, 12))
            b = (rng.random(t) < 0.4).astype(int)
            n, m = int(b.sum()) + int(rng.integers(0, 6)), int(rng.integers(1, 15))
            alpha = float(rng.uniform(0.1, 0.9))
            ones = int(b.sum())
            sigma = np.eye(t)
            metric = Markowitz(SimilarityMatrix(sigma), 1.0)
            plain = RelaxedProgram.at_cell(metric, b, alpha, n, m, sigma)
            damped = RelaxedProgram.at_cell(metric, b, alpha, n, m, sigma, damping=ones / (1 + ones))
            if damped.size == 0 or damped.kappa <= 0:
                continue
            chi = project_rsc(rng.normal(0.5, 1.0, damped.size), damped.kappa)
            assert damped.contains(chi)
            assert plain.contains(chi)
            checked += 1

    def test_contains_rejects_out_of_box(self):
        program = RelaxedProgram(Sharpe(SimilarityMatrix(np.eye(2))), beta=1.0, active=np.arange(2), sigma=np.eye(2), alpha=0.5, m=1)
        assert program.contains(np.array([0.5, 0.5]))
        assert not program.contains(np.array([1.5, 1.0]))
        assert not program.contains(np.array([1.0, 0.0]))
