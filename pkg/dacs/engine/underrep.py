"""Exact optimal stopping path for the underrepresentation index.

Rewards are expectations of the closed-form optimal value over a multivariate
hypergeometric draw of test-below category counts; the survival function of its minimum is
obtained by FFT convolution of truncated binomial PMFs.
"""
import logging
import math
from dataclasses import dataclass
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
from scipy.stats import binom

from dacs.engine.conformal import REL_TOL
from dacs.engine.diversity import encode_categories
from dacs.engine.parallel import parallel_map
from dacs.engine.stopping import StageTable
from dacs.models.state import ScoreState

logger = logging.getLogger(__name__)

SURVIVAL_FLOOR = 1e-13


@dataclass(frozen=True, eq=False)
class CategoryCounts:
    """Per-time category counts; row t covers sorted ranks 1..t (row 0 is all zeros)."""
    pooled: np.ndarray
    test_below: np.ndarray

    @classmethod
    def from_state(cls, state: ScoreState, n_categories: int) -> "CategoryCounts":
        codes = encode_categories(state.sorted_z, n_categories)
        onehot = np.zeros((state.size, n_categories), dtype=int)
        onehot[np.arange(state.size), codes] = 1
        zero = np.zeros((1, n_categories), dtype=int)
        pooled = np.vstack([zero, np.cumsum(onehot, axis=0)])
        test_only = onehot * (state.membership == 0)[:, None]
        test_below = np.vstack([zero, np.cumsum(test_only, axis=0)])
        return cls(pooled=pooled, test_below=test_below)


@dataclass(frozen=True)
class BudgetParams:
    """K_t, the smallest self-consistent selection size, and the feasibility threshold rho_t."""
    K: int
    rho: float


def budget(t: int, calib_above: int, alpha: float, n: int, m: int) -> BudgetParams:
    raw = m * (1 + n - calib_above) / (alpha * (n + 1))
    K = max(1, math.ceil(raw * (1 - REL_TOL)))
    rho = (alpha * t * (n + 1) - m) / (alpha * (n + 1) + m)
    return BudgetParams(K=K, rho=rho)


def underrep_opt_value(
    t: int,
    calib_above: int,
    test_below_counts: Sequence[int],
    n_categories: int,
    alpha: float,
    n: int,
    m: int,
) -> float:
    """Best underrepresentation index over self-consistent sets at time t."""
    counts = np.asarray(test_below_counts, dtype=int)
    params = budget(t, calib_above, alpha, n, m)
    # n - N_t <= rho_t is the same event as having at least K_t test points below t
    if counts.sum() < params.K:
        return -1.0 / n_categories
    lowest = int(counts.min())
    if lowest * n_categories >= params.K:
        return 1.0 / n_categories
    return lowest / params.K


def _survival_block(populations: np.ndarray, draws: np.ndarray, nu_max: int, p: float) -> np.ndarray:
    """S(nu) for nu = 1..nu_max and every entry of ``draws``, sharing one FFT batch."""
    total = int(populations.sum())
    size = total + 1
    nus = np.arange(1, nu_max + 1)
    spectrum = np.ones((nu_max, size // 2 + 1), dtype=complex)
    tails = np.ones(nu_max)
    for count in populations:
        support = np.arange(count + 1)
        pmf = binom.pmf(support, count, p)
        trunc = np.where(support[None, :] >= nus[:, None], pmf[None, :], 0.0)
        tail = trunc.sum(axis=1)
        tails *= tail
        cond = trunc / np.where(tail > 0, tail, 1.0)[:, None]
        spectrum *= np.fft.rfft(cond, n=size, axis=1)
    # P(sum M = d | M_c >= nu for all c) for every d
    conditional = np.fft.irfft(spectrum, n=size, axis=1)
    numer = conditional[:, draws] * tails[:, None]
    denom = binom.pmf(draws, total, p)
    surv = numer / denom[None, :]
    surv = np.clip(surv, 0.0, 1.0)
    surv[surv < SURVIVAL_FLOOR] = 0.0
    return surv.T


def _validated(populations: Sequence[int], draws: int) -> np.ndarray:
    counts = np.asarray(populations, dtype=int)
    total = int(counts.sum())
    if draws < 0 or draws > total:
        raise ValueError(f"draws={draws} outside [0, {total}]")
    return counts


def min_survival_fft(
    population_counts: Sequence[int],
    draws: int,
    nu_max: int,
    p: Optional[float] = None,
) -> np.ndarray:
    """S(nu) = P(min_c H_c >= nu), nu = 1..nu_max, for H ~ MultiHypergeom(draws; counts).

    Uses H =d (M_1..M_C | sum M = draws) with independent M_c ~ Binom(N_c, p). Any p in
    (0, 1) gives the same answer; the default p = draws / sum(N) keeps the conditioning
    event likely so the FFT round-off stays negligible.
    """
    counts = _validated(population_counts, draws)
    out = np.zeros(max(nu_max, 0))
    if nu_max <= 0 or counts.size == 0:
        return out
    total = int(counts.sum())
    lowest = int(counts.min())
    reach = min(nu_max, lowest, draws // counts.size)
    if reach <= 0:
        return out
    if draws == total:
        out[:min(nu_max, lowest)] = 1.0
        return out
    prob = draws / total if p is None else p
    out[:reach] = _survival_block(counts, np.array([draws]), reach, prob)[0]
    return out


def survival_for_draws(population_counts: Sequence[int], draws: Iterable[int], nu_max: int) -> Dict[int, np.ndarray]:
    """min_survival_fft for many draw sizes over the same urn.

    Draw sizes are bucketed so each FFT batch is centred on its bucket; buckets span two
    standard deviations of the binomial sum.
    """
    counts = np.asarray(population_counts, dtype=int)
    total = int(counts.sum())
    lowest = int(counts.min())
    result: Dict[int, np.ndarray] = {}
    pending: List[int] = []
    for d in sorted(set(int(d) for d in draws)):
        _validated(counts, d)
        reach = min(nu_max, lowest, d // counts.size)
        if reach <= 0 or d == total:
            result[d] = min_survival_fft(counts, d, nu_max)
        else:
            pending.append(d)

    i = 0
    while i < len(pending):
        start = pending[i]
        q = start / total
        width = max(1.0, 2.0 * math.sqrt(total * q * (1 - q)))
        j = i
        while j + 1 < len(pending) and pending[j + 1] - start <= width:
            j += 1
        bucket = np.array(pending[i:j + 1])
        centre = float(bucket.mean()) / total
        reach = min(nu_max, lowest, int(bucket.max()) // counts.size)
        block = _survival_block(counts, bucket, reach, centre)
        for d, row in zip(bucket, block):
            out = np.zeros(nu_max)
            own = min(reach, int(d) // counts.size)
            out[:own] = row[:own]
            result[int(d)] = out
        i = j + 1
    return result


def _reward_from_survival(survival: np.ndarray, K: int, n_categories: int) -> float:
    """E[min(M / K, 1 / C)] from S(nu) = P(M >= nu)."""
    k0 = math.ceil(K / n_categories)
    s = np.zeros(k0)
    take = min(k0, survival.size)
    s[:take] = survival[:take]
    s_top = s[k0 - 1]
    return float(s_top / n_categories + np.sum(s[:k0 - 1] - s_top) / K)


def underrep_reward(
    t: int,
    s: int,
    counts: CategoryCounts,
    alpha: float,
    n: int,
    m: int,
    n_categories: int,
) -> float:
    """R_t(s): expected optimal underrepresentation value at time t given N_t = s."""
    params = budget(t, s, alpha, n, m)
    draws = t - n + s
    if draws < params.K:
        return -1.0 / n_categories
    k0 = math.ceil(params.K / n_categories)
    survival = min_survival_fft(counts.pooled[t], draws, k0)
    return _reward_from_survival(survival, params.K, n_categories)


def underrep_reward_row(
    t: int,
    s_values: np.ndarray,
    counts: CategoryCounts,
    alpha: float,
    n: int,
    m: int,
    n_categories: int,
) -> np.ndarray:
    """Rewards R_t(s) for every s in ``s_values`` with one bucketed survival pass."""
    K = {int(s): budget(t, int(s), alpha, n, m).K for s in s_values}
    feasible = [int(s) for s in s_values if t - n + int(s) >= K[int(s)]]
    row = np.full(len(s_values), -1.0 / n_categories)
    if not feasible:
        return row
    nu_max = max(math.ceil(K[s] / n_categories) for s in feasible)
    survival = survival_for_draws(counts.pooled[t], [t - n + s for s in feasible], nu_max)
    for i, s in enumerate(s_values):
        s = int(s)
        if s in feasible:
            row[i] = _reward_from_survival(survival[t - n + s], K[s], n_categories)
    return row


def greedy_underrep_select(state: ScoreState, tau: int, alpha: float, n_categories: int) -> np.ndarray:
    """Self-consistent set at time tau with the largest underrepresentation index.

    Returns test-sample indices. Within a category the lowest-ranked candidates are taken
    first.
    """
    if tau < 1:
        return np.array([], dtype=int)
    n, m = state.n, state.m
    params = budget(tau, int(state.calib_above[tau]), alpha, n, m)
    positions = state.test_positions(tau)
    if positions.size < params.K:
        return np.array([], dtype=int)

    codes = encode_categories(state.sorted_z, n_categories)[positions]
    groups = [positions[codes == c] for c in range(n_categories)]
    order = sorted(range(n_categories), key=lambda c: (groups[c].size, c))
    sizes = [groups[c].size for c in order]
    C, K = n_categories, params.K

    if C * sizes[0] >= K:
        chosen = [groups[c][:sizes[0]] for c in order]
        return np.sort(state.test_index(np.concatenate(chosen)))

    chosen: List[np.ndarray] = []
    taken = 0
    c = 0
    while (C - c) * sizes[c] < K - taken:
        chosen.append(groups[order[c]])
        taken += sizes[c]
        c += 1

    # fill the remaining categories as evenly as possible, each with at least sizes[c - 1]
    remaining = K - taken
    caps = np.array(sizes[c:])
    level = sizes[c - 1]
    while np.minimum(caps, level).sum() < remaining:
        level += 1
    take = np.minimum(caps, level)
    excess = int(take.sum() - remaining)
    at_level = np.flatnonzero(caps >= level)
    for j in at_level[::-1][:excess]:
        take[j] -= 1
    for j, amount in enumerate(take):
        chosen.append(groups[order[c + j]][:amount])

    return np.sort(state.test_index(np.concatenate(chosen)))


def _reward_row_job(args) -> np.ndarray:
    t, s_values, counts, alpha, n, m, n_categories = args
    return underrep_reward_row(t, s_values, counts, alpha, n, m, n_categories)


def underrep_reward_table(
    state: ScoreState,
    tau_bh: int,
    alpha: float,
    n_categories: int,
    workers: int = 1,
    grid: Optional[Sequence[int]] = None,
) -> StageTable:
    """Exact reward table, one FFT pass per time; the full grid 1..tau_bh unless ``grid`` is given."""
    counts = CategoryCounts.from_state(state, n_categories)
    grid = np.arange(1, tau_bh + 1) if grid is None else grid
    table = StageTable.empty(grid, tau_bh, int(state.calib_above[tau_bh]), state.n)
    jobs = [
        (int(t), table.s_values(int(t)), counts, alpha, state.n, state.m, n_categories)
        for t in table.grid
    ]
    for q, row in enumerate(parallel_map(_reward_row_job, jobs, workers)):
        table.rows[q] = row
    logger.info(f"Computed {table.n_cells()} exact underrepresentation rewards up to t={tau_bh}")
    return table
