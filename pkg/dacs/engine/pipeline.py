"""End-to-end diversity-aware selection and the plain conformal selection baseline."""
import logging
import time
from contextlib import contextmanager
from typing import Optional, Sequence

import numpy as np
from prometheus_client import Summary

from dacs.engine.conformal import bh_stopping_time, cs_selection, e_values_at
from dacs.engine.diversity import DiversityMetric, Underrep, encode_categories, eval_set
from dacs.engine.relaxed import RelaxedProgram, randomized_round, relaxed_reward_table, solve_relaxed, sorted_sigma
from dacs.engine.stopping import (
    build_grid,
    coarse_snell,
    exchangeability_gap,
    optimal_stopping_time,
    snell_envelope,
)
from dacs.engine.underrep import greedy_underrep_select, underrep_reward_table
from dacs.errors import ConfigError, UnsupportedRelaxation
from dacs.models.results import (
    DacsConfig,
    Diagnostics,
    ExactUnderrepMode,
    RelaxedSolution,
    SelectionResult,
    metric_name,
)
from dacs.models.samples import CalibrationSample, TestSample
from dacs.models.state import ScoreState, build_score_state

logger = logging.getLogger(__name__)

# Prometheus metrics
bh_time = Summary("dacs_bh_seconds", "Time spent on the BH stopping time and CS set")
reward_table_time = Summary("dacs_reward_table_seconds", "Time spent filling reward tables")
snell_time = Summary("dacs_snell_seconds", "Time spent on the Snell envelope")
final_selection_time = Summary("dacs_final_selection_seconds", "Time spent on the final selection")

FINAL_TOL = 1e-10
# second entropy word of the generator used for the final rounding
FINAL_STREAM = 0xF17A1


@contextmanager
def _stage(summary: Summary, name: str, diagnostics: Diagnostics):
    start = time.perf_counter()
    with summary.time():
        yield
    diagnostics.wall_times[name] = time.perf_counter() - start


def selection_diversity(metric: DiversityMetric, selected: Sequence[int], state: ScoreState) -> float:
    """Diversity of a set of test indices."""
    selected = np.asarray(selected, dtype=int)
    if isinstance(metric, Underrep):
        is_test = state.membership == 0
        codes = np.empty(state.m, dtype=int)
        codes[state.origin[is_test] - state.n] = encode_categories(state.sorted_z, metric.n_categories)[is_test]
        return eval_set(metric, selected, z=codes)
    # similarity matrices are in pooled order: calibration rows first
    return eval_set(metric, state.n + selected)


def run_dacs(
    calib: Sequence[CalibrationSample],
    test: Sequence[TestSample],
    config: DacsConfig,
) -> SelectionResult:
    metric = config.metric
    exact = isinstance(config.mode, ExactUnderrepMode)
    if exact and not isinstance(metric, Underrep):
        raise ConfigError(f"exact mode only supports the underrepresentation index, got {metric_name(metric)}")
    if not exact and isinstance(metric, Underrep):
        raise UnsupportedRelaxation("relaxed mode needs the sharpe or markowitz metric")

    diagnostics = Diagnostics()
    state = build_score_state(calib, test, config.jitter_seed)
    n, m, alpha = state.n, state.m, config.alpha
    if not isinstance(metric, Underrep):
        diagnostics.similarity_ridge = metric.sigma.ridge

    with _stage(bh_time, "bh", diagnostics):
        tau_bh = bh_stopping_time(state, alpha)
        cs = cs_selection(state, alpha)
    diagnostics.tau_bh = tau_bh
    diagnostics.cs_set = cs.tolist()
    diagnostics.cs_diversity = selection_diversity(metric, cs, state)
    if tau_bh == 0:
        logger.info("BH stopping time is 0, nothing can be selected")
        diagnostics.diversity = metric.empty_value
        return SelectionResult(np.array([], dtype=int), 0, None, None, diagnostics)
    diagnostics.exchangeability_gap = exchangeability_gap(state, tau_bh)

    with _stage(reward_table_time, "rewards", diagnostics):
        if exact:
            grid = None if config.mode.grid_size is None else build_grid(tau_bh, config.mode.grid_size)
            rewards = underrep_reward_table(state, tau_bh, alpha, metric.n_categories, config.workers, grid)
        else:
            mode = config.mode
            rewards = relaxed_reward_table(
                state,
                metric,
                alpha,
                build_grid(tau_bh, mode.grid_size),
                tau_bh,
                L=mode.mc_draws,
                rounding_draws=mode.rounding_draws,
                master_seed=config.seed,
                warm_start=mode.warm_start,
                workers=config.workers,
                pgd=config.pgd,
            )

    with _stage(snell_time, "snell", diagnostics):
        snell = snell_envelope(rewards, n) if rewards.is_fine else coarse_snell(rewards, n)
        tau_star = optimal_stopping_time(rewards, snell, state.calib_above)
    logger.info(f"Stopping at tau*={tau_star} (tau_bh={tau_bh}, n={n}, m={m})")

    chi = None
    with _stage(final_selection_time, "final", diagnostics):
        if exact:
            selected = greedy_underrep_select(state, tau_star, alpha, metric.n_categories)
        else:
            program = RelaxedProgram.at_cell(
                metric, state.membership[:tau_star], alpha, n, m, sorted_sigma(state, metric)
            )
            solution = solve_relaxed(program, None, config.pgd.model_copy(update={"tol": FINAL_TOL}))
            rng = np.random.default_rng([config.seed, FINAL_STREAM])
            picks = randomized_round(solution.chi, rng)
            selected = np.sort(state.test_index(program.active[picks]))
            # report chi per test index
            chi_test = np.zeros(m)
            chi_test[state.test_index(program.active)] = solution.chi
            chi = RelaxedSolution(chi_test, solution.objective, solution.iterations, solution.feasible)

    diagnostics.diversity = selection_diversity(metric, selected, state)
    if config.keep_tables:
        diagnostics.tables = {"rewards": rewards, "snell": snell}
    return SelectionResult(
        selected=selected,
        tau_star=tau_star,
        e_values=e_values_at(state, tau_star),
        chi=chi,
        diagnostics=diagnostics,
    )


def run_cs(
    calib: Sequence[CalibrationSample],
    test: Sequence[TestSample],
    alpha: float,
    metric: Optional[DiversityMetric] = None,
    jitter_seed: Optional[int] = None,
) -> SelectionResult:
    if not 0 < alpha < 1:
        raise ConfigError("alpha must lie strictly between 0 and 1")
    diagnostics = Diagnostics()
    state = build_score_state(calib, test, jitter_seed)
    with _stage(bh_time, "bh", diagnostics):
        tau_bh = bh_stopping_time(state, alpha)
        selected = cs_selection(state, alpha)
    diagnostics.tau_bh = tau_bh
    diagnostics.cs_set = selected.tolist()
    if metric is not None:
        diagnostics.diversity = selection_diversity(metric, selected, state)
        diagnostics.cs_diversity = diagnostics.diversity
    e_values = e_values_at(state, tau_bh) if tau_bh > 0 else None
    return SelectionResult(selected=selected, tau_star=tau_bh, e_values=e_values, diagnostics=diagnostics)
