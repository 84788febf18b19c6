"""Conformal p-values, the BH stopping time, stopped e-values and self-consistency."""
import logging
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from dacs.models.state import ScoreState

logger = logging.getLogger(__name__)

# relative slack for comparisons that hit equality on exact rational inputs
REL_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EValueVector:
    """e^(t) for every test unit, in test-sample order."""
    t: int
    values: np.ndarray
    denom: int

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.values > 0)


def conformal_p_values(state: ScoreState) -> np.ndarray:
    """p_i = (1 + #{j: V_hat_i >= V_j}) / (n + 1), in test-sample order."""
    ranks = state.test_rank
    # a test unit at rank r has exactly n - N_r calibration scores below it
    below = state.n - state.calib_above[ranks]
    return (1.0 + below) / (state.n + 1)


def bh_stopping_time(state: ScoreState, alpha: float) -> int:
    """Largest t whose FDP estimate is at most alpha, 0 when none qualifies."""
    n, m = state.n, state.m
    t = np.arange(1, state.size + 1)
    calib_below = n - state.calib_above[1:]
    test_below = t - calib_below
    fdp_hat = (m / (n + 1)) * (1.0 + calib_below) / np.maximum(test_below, 1)
    ok = np.flatnonzero(fdp_hat <= alpha * (1 + REL_TOL))
    tau = int(t[ok[-1]]) if ok.size else 0
    logger.debug(f"BH stopping time {tau} at alpha={alpha}")
    return tau


def e_values_at(state: ScoreState, t: int) -> EValueVector:
    """e^(t)_i = (n + 1) 1{rank_i <= t} / (1 + n - N_t)."""
    if not 1 <= t <= state.size:
        raise ValueError(f"t must lie in [1, {state.size}], got {t}")
    denom = 1 + state.calib_below(t)
    values = np.where(state.test_rank <= t, (state.n + 1) / denom, 0.0)
    return EValueVector(t=t, values=values, denom=denom)


def is_self_consistent(R: Iterable[int], e: EValueVector, alpha: float, m: int) -> bool:
    """True when every selected e-value reaches m / (alpha |R|); the empty set qualifies."""
    idx = np.fromiter(R, dtype=int)
    if idx.size == 0:
        return True
    threshold = m / (alpha * idx.size)
    return bool(np.all(e.values[idx] >= threshold * (1 - REL_TOL)))


def cs_selection(state: ScoreState, alpha: float) -> np.ndarray:
    """Conformal selection: eBH at the BH stopping time."""
    tau = bh_stopping_time(state, alpha)
    if tau == 0:
        return np.array([], dtype=int)
    return e_values_at(state, tau).support


def bh_selection_p_values(p_values: np.ndarray, alpha: float) -> np.ndarray:
    """Plain Benjamini-Hochberg on a vector of p-values."""
    p = np.asarray(p_values, dtype=float)
    m = p.size
    order = np.argsort(p, kind="stable")
    thresholds = alpha * np.arange(1, m + 1) / m
    passed = np.flatnonzero(p[order] <= thresholds * (1 + REL_TOL))
    if passed.size == 0:
        return np.array([], dtype=int)
    k = passed[-1] + 1
    return np.sort(np.flatnonzero(p <= alpha * k / m * (1 + REL_TOL)))
