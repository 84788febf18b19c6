"""Relaxed self-consistency programs for the Sharpe and Markowitz objectives.

A membership vector b over the first t sorted positions fixes the e-values: every position
with b = 0 gets (n + 1) / (1 + sum b), the others get 0. The relaxed program maximizes the
metric over chi in [0, 1] on the positive positions subject to chi_i <= kappa * sum(chi),
kappa = alpha * beta / m.
"""
import logging
from dataclasses import dataclass, field
from functools import partial
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np

from dacs.engine.diversity import (
    DiversityMetric,
    Markowitz,
    Sharpe,
    Underrep,
    eval_relaxed,
    expected_rounded_markowitz,
    expected_rounded_sharpe_mc,
)
from dacs.engine.parallel import parallel_map
from dacs.engine.solvers import PgdConfig, feasibility_check, pgd_minimize, project_capped_simplex, project_rsc
from dacs.engine.stopping import StageTable, mc_reward, membership_rng, uniform_membership
from dacs.errors import DataError, NoFlippableOne, UnsupportedRelaxation
from dacs.models.results import RelaxedSolution
from dacs.models.state import ScoreState

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class RelaxedProgram:
    metric: DiversityMetric
    beta: float
    active: np.ndarray
    sigma: np.ndarray
    alpha: float
    m: int

    @property
    def kappa(self) -> float:
        return self.alpha * self.beta / self.m

    @property
    def size(self) -> int:
        return int(self.active.size)

    @property
    def feasible(self) -> bool:
        return feasibility_check(self.beta, self.size, self.alpha, self.m)

    def contains(self, chi: np.ndarray, tol: float = 1e-12) -> bool:
        """Whether chi satisfies 0 <= chi <= 1 and chi_i <= kappa * sum(chi)."""
        chi = np.asarray(chi, dtype=float)
        if np.any(chi < -tol) or np.any(chi > 1 + tol):
            return False
        return bool(np.all(chi <= self.kappa * chi.sum() + tol))

    @classmethod
    def at_cell(
        cls,
        metric: DiversityMetric,
        b: np.ndarray,
        alpha: float,
        n: int,
        m: int,
        sigma_sorted: np.ndarray,
        damping: float = 1.0,
    ) -> "RelaxedProgram":
        """Program for membership prefix ``b``; ``damping`` scales the common e-value."""
        if isinstance(metric, Underrep):
            raise UnsupportedRelaxation("the underrepresentation index has no relaxed program")
        b = np.asarray(b)
        active = np.flatnonzero(b == 0)
        beta = damping * (n + 1) / (1 + int(b.sum()))
        return cls(
            metric=metric,
            beta=beta,
            active=active,
            sigma=sigma_sorted[np.ix_(active, active)],
            alpha=alpha,
            m=m,
        )


def sorted_sigma(state: ScoreState, metric: DiversityMetric) -> np.ndarray:
    """Similarity matrix permuted into sorted-score order."""
    if isinstance(metric, Underrep):
        raise UnsupportedRelaxation("the underrepresentation index has no similarity matrix")
    entries = metric.sigma.entries
    if entries.shape[0] != state.size:
        raise DataError(f"similarity matrix has dimension {entries.shape[0]}, expected {state.size}")
    return entries[np.ix_(state.origin, state.origin)]


def solve_relaxed(
    program: RelaxedProgram,
    warm_start: Optional[np.ndarray] = None,
    pgd: PgdConfig = PgdConfig(),
) -> RelaxedSolution:
    """Solve the relaxed program; chi = 0 when only the zero vector is feasible."""
    p = program.size
    if p == 0 or not program.feasible:
        return RelaxedSolution(chi=np.zeros(p), objective=0.0, iterations=0, feasible=False)

    S = program.sigma
    metric = program.metric
    if isinstance(metric, Markowitz):
        gamma = metric.gamma
        x0 = np.ones(p) if warm_start is None else np.clip(warm_start, 0.0, 1.0)
        result = pgd_minimize(
            grad_fn=lambda x: gamma * (S @ x) - 1.0,
            objective_fn=lambda x: gamma / 2 * float(x @ S @ x) - float(x.sum()),
            project_fn=lambda y: project_rsc(y, program.kappa),
            x0=x0,
            config=pgd,
        )
        chi = np.clip(result.x, 0.0, 1.0)
    elif isinstance(metric, Sharpe):
        # min x'Sx over {sum x = 1, 0 <= x <= min(kappa, 1)}, then rescale to max-norm 1
        cap = min(program.kappa, 1.0)
        if warm_start is not None and np.sum(np.clip(warm_start, 0.0, None)) > 0:
            x0 = np.clip(warm_start, 0.0, None) / np.sum(np.clip(warm_start, 0.0, None))
        else:
            x0 = np.full(p, 1.0 / p)
        result = pgd_minimize(
            grad_fn=lambda x: 2.0 * (S @ x),
            objective_fn=lambda x: float(x @ S @ x),
            project_fn=lambda y: project_capped_simplex(y, cap, 1.0),
            x0=x0,
            config=pgd,
        )
        chi = result.x / np.max(result.x)
    else:
        raise UnsupportedRelaxation(f"no relaxed program for {type(metric).__name__}")

    return RelaxedSolution(
        chi=chi,
        objective=eval_relaxed(metric, chi, S),
        iterations=result.iterations,
        feasible=True,
    )


def relaxed_opt_value(
    t: int,
    b: np.ndarray,
    metric: DiversityMetric,
    alpha: float,
    n: int,
    m: int,
    sigma_sorted: np.ndarray,
    rounding_draws: int = 50,
    rng: Optional[np.random.Generator] = None,
    warm_start: Optional[np.ndarray] = None,
    pgd: PgdConfig = PgdConfig(),
) -> Tuple[float, np.ndarray]:
    """Expected diversity of the rounded relaxed solution at time t.

    Returns the value and chi over all t positions (zero where b = 1). ``warm_start`` is
    indexed the same way.
    """
    program = RelaxedProgram.at_cell(metric, b[:t], alpha, n, m, sigma_sorted)
    chi_full = np.zeros(t)
    if program.size == 0:
        return metric.empty_value, chi_full
    warm = None if warm_start is None else np.asarray(warm_start)[program.active]
    solution = solve_relaxed(program, warm, pgd)
    chi_full[program.active] = solution.chi
    if not solution.feasible:
        return metric.empty_value, chi_full
    if isinstance(metric, Markowitz):
        value = expected_rounded_markowitz(solution.chi, program.sigma, metric.gamma)
    else:
        value = expected_rounded_sharpe_mc(solution.chi, program.sigma, rounding_draws, rng)
    return value, chi_full


def _couple_step(b_next: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, Optional[int]]:
    t = b_next.size - 1
    b = b_next[:t].copy()
    if b_next[t] == 1:
        return b, None
    ones = np.flatnonzero(b == 1)
    if ones.size == 0:
        raise NoFlippableOne(f"no calibration coordinate to flip in a length-{t + 1} vector")
    j = int(rng.choice(ones))
    b[j] = 0
    return b, j


def couple_down(b_next: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Map a uniform draw with N_{t+1} = s to a uniform draw with N_t = s + 1."""
    return _couple_step(np.asarray(b_next), rng)[0]


def carry_warm_start(chi_next: np.ndarray, flipped: Optional[int]) -> np.ndarray:
    """Move chi across one coupling step: the dropped last entry lands on the flipped index."""
    chi = chi_next[:-1].copy()
    if flipped is not None:
        chi[flipped] = chi_next[-1]
    return chi


@dataclass
class CoupledPath:
    """Cells visited in order, each reached from the previous one by couple_down steps.

    Along a path t decreases through consecutive grid times and s grows by the gap.
    """
    cells: List[Tuple[int, int]] = field(default_factory=list)

    def walk(self, n: int, master_seed: int, ell: int) -> Iterator[Tuple[int, int, np.ndarray, List[Optional[int]], np.random.Generator]]:
        """Yield (t, s, b, flips since previous cell, rng) for the ell-th coupled draw."""
        t0, s0 = self.cells[0]
        rng = membership_rng(master_seed, t0, s0, ell)
        b = uniform_membership(rng, t0, n - s0)
        yield t0, s0, b, [], rng
        for t, s in self.cells[1:]:
            flips = []
            while b.size > t:
                b, j = _couple_step(b, rng)
                flips.append(j)
            yield t, s, b, flips, rng


def warm_start_schedule(tau_bh: int, N_tau_bh: int, n: int, grid: Sequence[int]) -> List[CoupledPath]:
    """Partition every (t, s) cell of the grid into coupled paths.

    From (t_q, s) a path moves to (t_{q-1}, s + t_q - t_{q-1}) when that cell exists. A path
    starts wherever no cell leads into it, so each cell is covered exactly once.
    """
    table = StageTable.empty(grid, tau_bh, N_tau_bh, n)
    times = [int(t) for t in table.grid]
    paths: List[CoupledPath] = []
    for q in range(len(times) - 1, -1, -1):
        t = times[q]
        lo, hi = table.support(t)
        for s in range(lo, hi + 1):
            if q + 1 < len(times):
                t_up = times[q + 1]
                up_lo, up_hi = table.support(t_up)
                if up_lo <= s - (t_up - t) <= up_hi:
                    continue
            path = CoupledPath(cells=[(t, s)])
            for q_down in range(q - 1, -1, -1):
                t_down = times[q_down]
                s_down = path.cells[-1][1] + (path.cells[-1][0] - t_down)
                down_lo, down_hi = table.support(t_down)
                if not down_lo <= s_down <= down_hi:
                    break
                path.cells.append((t_down, s_down))
            paths.append(path)
    return paths


def randomized_round(chi: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Indices i with xi_i = 1 for independent xi_i ~ Bernoulli(chi_i)."""
    chi = np.asarray(chi, dtype=float)
    return np.flatnonzero(rng.random(chi.size) < chi)


@dataclass(frozen=True, eq=False)
class _CellContext:
    metric: DiversityMetric
    alpha: float
    n: int
    m: int
    sigma_sorted: np.ndarray
    rounding_draws: int
    pgd: PgdConfig
    master_seed: int


def _cell_value(ctx: _CellContext, t: int, b: np.ndarray, rng: np.random.Generator) -> float:
    value, _ = relaxed_opt_value(
        t, b, ctx.metric, ctx.alpha, ctx.n, ctx.m, ctx.sigma_sorted, ctx.rounding_draws, rng, pgd=ctx.pgd
    )
    return value


def _cold_job(args) -> float:
    ctx, t, s, L = args
    return mc_reward(t, s, partial(_cell_value, ctx, t), L, ctx.n, ctx.master_seed)


def _path_job(args) -> List[float]:
    ctx, path, L = args
    totals = np.zeros(len(path.cells))
    for ell in range(L):
        chi = None
        for i, (t, s, b, flips, rng) in enumerate(path.walk(ctx.n, ctx.master_seed, ell)):
            warm = None
            if chi is not None:
                for j in flips:
                    chi = carry_warm_start(chi, j)
                warm = chi
            value, chi = relaxed_opt_value(
                t, b, ctx.metric, ctx.alpha, ctx.n, ctx.m, ctx.sigma_sorted,
                ctx.rounding_draws, rng, warm_start=warm, pgd=ctx.pgd,
            )
            totals[i] += value
    return (totals / L).tolist()


def relaxed_reward_table(
    state: ScoreState,
    metric: DiversityMetric,
    alpha: float,
    grid: Sequence[int],
    tau_bh: int,
    L: int,
    rounding_draws: int = 50,
    master_seed: int = 0,
    warm_start: bool = True,
    workers: int = 1,
    pgd: PgdConfig = PgdConfig(),
) -> StageTable:
    """Monte Carlo rewards from relaxed optimal values on the grid."""
    ctx = _CellContext(
        metric=metric,
        alpha=alpha,
        n=state.n,
        m=state.m,
        sigma_sorted=sorted_sigma(state, metric),
        rounding_draws=rounding_draws,
        pgd=pgd,
        master_seed=master_seed,
    )
    table = StageTable.empty(grid, tau_bh, int(state.calib_above[tau_bh]), state.n)
    if warm_start:
        paths = warm_start_schedule(tau_bh, int(state.calib_above[tau_bh]), state.n, table.grid)
        results = parallel_map(_path_job, [(ctx, path, L) for path in paths], workers)
        for path, values in zip(paths, results):
            for (t, s), value in zip(path.cells, values):
                table.set(t, s, value)
        logger.info(f"Filled {table.n_cells()} relaxed reward cells along {len(paths)} coupled paths")
    else:
        cells = list(table.cells())
        results = parallel_map(_cold_job, [(ctx, t, s, L) for t, s in cells], workers)
        for (t, s), value in zip(cells, results):
            table.set(t, s, value)
        logger.info(f"Filled {table.n_cells()} relaxed reward cells with independent draws")
    return table


def baseline_relaxed_solutions(
    state: ScoreState,
    metric: DiversityMetric,
    alpha: float,
    tau_bh: int,
    pgd: PgdConfig = PgdConfig(),
) -> List[np.ndarray]:
    """chi over positions 1..t at the observed membership, for t = 1..tau_bh."""
    sigma = sorted_sigma(state, metric)
    out = []
    for t in range(1, tau_bh + 1):
        program = RelaxedProgram.at_cell(metric, state.membership[:t], alpha, state.n, state.m, sigma)
        chi_full = np.zeros(t)
        chi_full[program.active] = solve_relaxed(program, pgd=pgd).chi
        out.append(chi_full)
    return out
