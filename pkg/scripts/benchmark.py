import argparse
import logging
import time
from typing import Dict

import numpy as np
from prometheus_client import Summary, start_http_server

from dacs.config import configure_logging, load_settings
from dacs.engine.conformal import bh_stopping_time
from dacs.engine.diversity import Markowitz, rbf_similarity
from dacs.engine.relaxed import RelaxedProgram, relaxed_reward_table, solve_relaxed, sorted_sigma
from dacs.engine.stopping import build_grid, coarse_snell, snell_envelope
from dacs.engine.underrep import min_survival_fft, underrep_reward_table
from dacs.harness.simulate import get_setting, simulate
from dacs.models.state import build_score_state

logger = logging.getLogger(__name__)

# Prometheus metrics
survival_fft_time = Summary("bench_survival_fft_seconds", "Time spent on one FFT survival function")
underrep_table_time = Summary("bench_underrep_table_seconds", "Time spent on the exact reward table")
snell_time = Summary("bench_snell_seconds", "Time spent on the Snell envelope")
pgd_time = Summary("bench_pgd_seconds", "Time spent on one relaxed program")
relaxed_table_time = Summary("bench_relaxed_table_seconds", "Time spent on the Monte Carlo reward table")


class DacsBenchmark:
    """Time the heavy stages on one simulated dataset per family."""

    def __init__(self, n_calib: int, n_test: int, alpha: float, seed: int):
        self.alpha = alpha
        under = simulate(get_setting("u1", n_calib=n_calib, n_test=n_test), seed)
        self.under_state = build_score_state(under.calib, under.test)
        self.under_tau = bh_stopping_time(self.under_state, alpha)
        sim = simulate(get_setting("sm2", n_calib=n_calib, n_test=n_test), seed)
        self.sim_state = build_score_state(sim.calib, sim.test)
        self.sim_tau = bh_stopping_time(self.sim_state, alpha)
        sigma = rbf_similarity(np.asarray([s.z for s in sim.calib] + [s.z for s in sim.test]))
        self.markowitz = Markowitz(sigma, 1.0)

    @survival_fft_time.time()
    def benchmark_survival_fft(self) -> Dict:
        start_time = time.time()
        counts = [120, 150, 90, 140]
        survival = min_survival_fft(counts, 250, 60)
        return {"time": time.time() - start_time, "nu": len(survival)}

    @underrep_table_time.time()
    def benchmark_underrep_table(self) -> Dict:
        start_time = time.time()
        if self.under_tau == 0:
            return {"time": 0.0, "cells": 0}
        self.rewards = underrep_reward_table(self.under_state, self.under_tau, self.alpha, 3)
        return {"time": time.time() - start_time, "cells": self.rewards.n_cells()}

    @snell_time.time()
    def benchmark_snell(self) -> Dict:
        start_time = time.time()
        if self.under_tau == 0:
            return {"time": 0.0}
        snell_envelope(self.rewards, self.under_state.n)
        return {"time": time.time() - start_time}

    @pgd_time.time()
    def benchmark_pgd(self) -> Dict:
        start_time = time.time()
        t = max(self.sim_tau, 1)
        program = RelaxedProgram.at_cell(
            self.markowitz,
            self.sim_state.membership[:t],
            self.alpha,
            self.sim_state.n,
            self.sim_state.m,
            sorted_sigma(self.sim_state, self.markowitz),
        )
        solution = solve_relaxed(program)
        return {"time": time.time() - start_time, "p": program.size, "iterations": solution.iterations}

    @relaxed_table_time.time()
    def benchmark_relaxed_table(self, mc_draws: int, grid_size: int) -> Dict:
        start_time = time.time()
        if self.sim_tau == 0:
            return {"time": 0.0, "cells": 0}
        grid = build_grid(self.sim_tau, grid_size)
        rewards = relaxed_reward_table(
            self.sim_state, self.markowitz, self.alpha, grid, self.sim_tau, L=mc_draws
        )
        coarse_snell(rewards, self.sim_state.n)
        return {"time": time.time() - start_time, "cells": rewards.n_cells()}


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description="Time DACS stages")
    parser.add_argument("--n-calib", type=int, default=200)
    parser.add_argument("--n-test", type=int, default=100)
    parser.add_argument("--alpha", type=float, default=0.3)
    parser.add_argument("--mc-draws", type=int, default=10)
    parser.add_argument("--grid", type=int, default=10)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    settings = load_settings()
    configure_logging(settings.log_level)
    start_http_server(settings.metrics_port or 9100)  # Expose metrics for Prometheus
    benchmark = DacsBenchmark(args.n_calib, args.n_test, args.alpha, args.seed)
    logger.info(benchmark.benchmark_survival_fft())
    logger.info(benchmark.benchmark_underrep_table())
    logger.info(benchmark.benchmark_snell())
    logger.info(benchmark.benchmark_pgd())
    logger.info(benchmark.benchmark_relaxed_table(args.mc_draws, args.grid))
