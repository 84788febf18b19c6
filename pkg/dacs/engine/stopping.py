"""Optimal stopping over the sorted scores.

Tables hold one dense row per grid time t, indexed by s - lo_t for s in the support
[lo_t, hi_t] of N_t given the information at the BH stopping time.
"""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
from prometheus_client import Counter
from scipy.special import gammaln

from dacs.errors import MissingCell
from dacs.models.state import ScoreState

logger = logging.getLogger(__name__)

# Prometheus metrics
mc_cells = Counter("dacs_mc_reward_cells", "Reward cells estimated by Monte Carlo")


def support_range(t: int, tau_bh: int, N_tau_bh: int, n: int) -> Tuple[int, int]:
    """Values N_t can take given N at the BH stopping time."""
    if not 1 <= t <= tau_bh:
        raise ValueError(f"t must lie in [1, {tau_bh}], got {t}")
    return max(N_tau_bh, n - t), min(n, tau_bh - t + N_tau_bh)


@dataclass(eq=False)
class StageTable:
    """Values indexed by (t, s) over the conditional supports, t restricted to ``grid``."""
    grid: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    rows: List[np.ndarray]
    _pos: Dict[int, int] = field(init=False, repr=False)

    def __post_init__(self):
        self._pos = {int(t): q for q, t in enumerate(self.grid)}

    @classmethod
    def empty(cls, grid, tau_bh: int, N_tau_bh: int, n: int) -> "StageTable":
        grid = np.asarray(grid, dtype=int)
        if grid.size == 0 or np.any(np.diff(grid) <= 0) or grid[0] != 1 or grid[-1] != tau_bh:
            raise ValueError(f"grid must increase from 1 to {tau_bh}")
        bounds = [support_range(int(t), tau_bh, N_tau_bh, n) for t in grid]
        lo = np.array([b[0] for b in bounds], dtype=int)
        hi = np.array([b[1] for b in bounds], dtype=int)
        rows = [np.full(h - l + 1, np.nan) for l, h in zip(lo, hi)]
        return cls(grid=grid, lo=lo, hi=hi, rows=rows)

    def like(self) -> "StageTable":
        return StageTable(self.grid.copy(), self.lo.copy(), self.hi.copy(), [np.full_like(r, np.nan) for r in self.rows])

    @property
    def is_fine(self) -> bool:
        return bool(np.all(np.diff(self.grid) == 1))

    def support(self, t: int) -> Tuple[int, int]:
        q = self._index(t)
        return int(self.lo[q]), int(self.hi[q])

    def s_values(self, t: int) -> np.ndarray:
        lo, hi = self.support(t)
        return np.arange(lo, hi + 1)

    def row(self, t: int) -> np.ndarray:
        return self.rows[self._index(t)]

    def get(self, t: int, s: int) -> float:
        lo, hi = self.support(t)
        if not lo <= s <= hi:
            raise MissingCell(f"s={s} lies outside the support [{lo}, {hi}] at t={t}")
        value = self.rows[self._index(t)][s - lo]
        if np.isnan(value):
            raise MissingCell(f"no value stored at (t={t}, s={s})")
        return float(value)

    def set(self, t: int, s: int, value: float) -> None:
        lo, _ = self.support(t)
        self.rows[self._index(t)][s - lo] = value

    def cells(self) -> Iterator[Tuple[int, int]]:
        for t, lo, hi in zip(self.grid, self.lo, self.hi):
            for s in range(lo, hi + 1):
                yield int(t), int(s)

    def n_cells(self) -> int:
        return int(np.sum(self.hi - self.lo + 1))

    def to_frame(self, column: str = "value") -> pd.DataFrame:
        ts, ss, vals = [], [], []
        for t, lo, row in zip(self.grid, self.lo, self.rows):
            ts.extend([int(t)] * row.size)
            ss.extend(range(int(lo), int(lo) + row.size))
            vals.extend(row.tolist())
        return pd.DataFrame({"t": ts, "s": ss, column: vals})

    def _index(self, t: int) -> int:
        try:
            return self._pos[int(t)]
        except KeyError:
            raise MissingCell(f"t={t} is not on the grid") from None


RewardTable = StageTable
SnellTable = StageTable


def _log_choose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return gammaln(a + 1) - gammaln(b + 1) - gammaln(a - b + 1)


def transition_weights(t: int, t_prev: int, s_now: np.ndarray, s_prev: np.ndarray, n: int) -> np.ndarray:
    """P(N_{t_prev} = s' | N_t = s) under exchangeable membership, shape (len(s_now), len(s_prev)).

    Between the two times ``t - t_prev`` positions are revealed and s' - s of them are
    calibration points; given N_t = s that count is Hypergeom(t, n - s, t - t_prev).
    """
    gap = t - t_prev
    s = np.asarray(s_now, dtype=int)[:, None]
    k = np.asarray(s_prev, dtype=int)[None, :] - s
    ones = n - s
    if gap == 1:
        w = np.where(k == 0, (t - ones) / t, 0.0) + np.where(k == 1, ones / t, 0.0)
        return np.broadcast_to(w, (s.shape[0], k.shape[1])).astype(float)
    valid = (k >= np.maximum(0, gap - (t - ones))) & (k <= np.minimum(ones, gap))
    kk = np.where(valid, k, 0)
    with np.errstate(invalid="ignore"):
        logp = _log_choose(ones, kk) + _log_choose(t - ones, gap - kk) - _log_choose(np.float64(t), np.float64(gap))
    return np.where(valid, np.exp(logp), 0.0)


def _backward(rewards: StageTable, n: int) -> StageTable:
    snell = rewards.like()
    prev: Optional[np.ndarray] = None
    for q, t in enumerate(rewards.grid):
        R = rewards.rows[q]
        if np.any(np.isnan(R)):
            missing = int(np.flatnonzero(np.isnan(R))[0]) + int(rewards.lo[q])
            raise MissingCell(f"reward missing at (t={t}, s={missing})")
        if prev is None:
            E = R.copy()
        else:
            t_prev = int(rewards.grid[q - 1])
            W = transition_weights(int(t), t_prev, rewards.s_values(t), rewards.s_values(t_prev), n)
            E = np.maximum(R, W @ prev)
        snell.rows[q] = E
        prev = E
    return snell


def snell_envelope(rewards: RewardTable, n: int) -> SnellTable:
    """E_1 = R_1 and E_t(s) = max(R_t(s), E[E_{t-1}(N_{t-1}) | N_t = s]) on the full grid."""
    if not rewards.is_fine:
        raise ValueError("snell_envelope needs every time 1..tau_bh; use coarse_snell for a grid")
    return _backward(rewards, n)


def coarse_snell(rewards: RewardTable, n: int) -> SnellTable:
    """Snell envelope on an arbitrary grid, mixing across gaps with hypergeometric weights."""
    return _backward(rewards, n)


def optimal_stopping_time(rewards: RewardTable, snell: SnellTable, observed_N: np.ndarray) -> int:
    """Largest grid time t at which R_t(N_t) >= E_t(N_t) on the realized path."""
    for t in rewards.grid[::-1]:
        s = int(observed_N[t])
        if rewards.get(int(t), s) >= snell.get(int(t), s):
            return int(t)
    # E_1 = R_1, so the loop always returns
    raise MissingCell("grid does not start at t=1")


def build_grid(tau_bh: int, target_Q: int) -> np.ndarray:
    """Evenly spaced integer times from 1 to tau_bh, at most ``target_Q`` of them."""
    if target_Q < 2:
        raise ValueError("target_Q must be at least 2")
    if tau_bh < 1:
        raise ValueError("tau_bh must be positive")
    if tau_bh <= target_Q:
        return np.arange(1, tau_bh + 1)
    return np.unique(np.floor(np.linspace(1, tau_bh, target_Q) + 0.5).astype(int))


def membership_rng(master_seed: int, t: int, s: int, ell: int) -> np.random.Generator:
    """Generator whose stream depends only on (master_seed, t, s, ell)."""
    return np.random.default_rng([master_seed, t, s, ell])


def uniform_membership(rng: np.random.Generator, t: int, n_ones: int) -> np.ndarray:
    """Uniform draw from the length-t binary vectors with ``n_ones`` ones."""
    b = np.zeros(t, dtype=np.int8)
    if n_ones > 0:
        b[rng.choice(t, size=n_ones, replace=False)] = 1
    return b


MembershipSampler = Callable[[np.random.Generator, int, int], np.ndarray]
OptValueFn = Callable[[np.ndarray, np.random.Generator], float]


def mc_reward(
    t: int,
    s: int,
    opt_value_fn: OptValueFn,
    L: int,
    n: int,
    master_seed: int = 0,
    sampler: MembershipSampler = uniform_membership,
) -> float:
    """Average of ``opt_value_fn(b, rng)`` over L membership vectors drawn with N_t = s."""
    if L < 1:
        raise ValueError("L must be at least 1")
    total = 0.0
    for ell in range(L):
        rng = membership_rng(master_seed, t, s, ell)
        b = sampler(rng, t, n - s)
        total += opt_value_fn(b, rng)
    mc_cells.inc()
    return total / L


def exchangeability_gap(state: ScoreState, tau_bh: int) -> float:
    """Largest deviation of the realized N_t from its exchangeable mean n - (n - N_tau) t / tau."""
    if tau_bh < 1:
        return 0.0
    t = np.arange(1, tau_bh + 1)
    N_tau = state.calib_above[tau_bh]
    expected = state.n - (state.n - N_tau) * t / tau_bh
    return float(np.max(np.abs(state.calib_above[t] - expected)))


def dump_tables_csv(rewards: RewardTable, snell: SnellTable, path: str) -> None:
    """Write columns t, s, R, E for every cell."""
    frame = rewards.to_frame("R")
    frame["E"] = snell.to_frame("E")["E"].to_numpy()
    try:
        frame.to_csv(path, index=False)
    except OSError as e:
        logger.error(f"Error writing stopping tables to {path}: {e}")
        raise
    logger.info(f"Wrote {len(frame)} table cells to {path}")
