import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from dacs.errors import DuplicateFiniteScore, EmptyTestSet
from dacs.models.samples import CalibrationSample, OriginKind, Score, TestSample, clipped_score

logger = logging.getLogger(__name__)

JITTER_SCALE = 1e-9


@dataclass(frozen=True, eq=False)
class ScoreState:
    """Sorted joint calibration/test scores and everything the filtration reveals.

    Positions are 0-based in arrays; "rank" and "time" t are 1-based, so position ``t - 1``
    holds W_(t). ``calib_above[t]`` is N_t, the number of calibration points ranked strictly
    above t, for t = 0..n+m.
    """
    sorted_scores: np.ndarray
    membership: np.ndarray
    sorted_z: np.ndarray
    origin: np.ndarray
    n: int
    m: int
    calib_above: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return self.n + self.m

    @property
    def test_rank(self) -> np.ndarray:
        """1-based rank of every test unit, in input order."""
        ranks = np.empty(self.m, dtype=int)
        is_test = self.origin >= self.n
        ranks[self.origin[is_test] - self.n] = np.flatnonzero(is_test) + 1
        return ranks

    def calib_below(self, t: int) -> int:
        """Number of calibration points among the first t sorted positions."""
        return self.n - int(self.calib_above[t])

    def test_positions(self, t: int) -> np.ndarray:
        """0-based sorted positions of test points ranked at most t."""
        return np.flatnonzero(self.membership[:t] == 0)

    def test_index(self, positions: Sequence[int]) -> np.ndarray:
        """Map sorted positions of test points back to test-sample indices."""
        return np.asarray(self.origin[np.asarray(positions, dtype=int)] - self.n, dtype=int)

    def scores(self) -> List[Score]:
        """Scores in sorted order with their origins."""
        out = []
        for value, pooled in zip(self.sorted_scores, self.origin):
            if pooled < self.n:
                out.append(Score(float(value), OriginKind.CALIBRATION, int(pooled)))
            else:
                out.append(Score(float(value), OriginKind.TEST, int(pooled - self.n)))
        return out


def _stack_diversifiers(values: list) -> np.ndarray:
    if values and all(isinstance(v, (list, tuple, np.ndarray)) for v in values):
        return np.asarray(values, dtype=float)
    arr = np.empty(len(values), dtype=object)
    arr[:] = values
    return arr


def build_score_state(
    calib: Sequence[CalibrationSample],
    test: Sequence[TestSample],
    jitter_seed: Optional[int] = None,
) -> ScoreState:
    """Sort pooled calibration and imputed test scores.

    Ties among +inf calibration scores keep input order. Colliding finite scores raise
    DuplicateFiniteScore unless ``jitter_seed`` is given, in which case every finite score
    is perturbed by seeded uniform noise of size 1e-9 times the finite range.
    """
    if len(test) == 0:
        raise EmptyTestSet("at least one test sample is required")
    n, m = len(calib), len(test)

    scores = np.array(
        [clipped_score(s.y, s.mu_hat) for s in calib] + [clipped_score(None, s.mu_hat) for s in test],
        dtype=float,
    )
    finite = np.isfinite(scores)
    if jitter_seed is not None:
        rng = np.random.default_rng(jitter_seed)
        span = float(np.ptp(scores[finite])) if finite.sum() > 1 else 0.0
        magnitude = JITTER_SCALE * (span if span > 0 else 1.0)
        scores[finite] += rng.uniform(-magnitude, magnitude, size=int(finite.sum()))
        logger.debug(f"Applied score jitter of magnitude {magnitude:.3e}")

    # stable sort: equal scores keep pooled index order (calibration first)
    order = np.argsort(scores, kind="stable")
    sorted_scores = scores[order]
    finite_sorted = sorted_scores[np.isfinite(sorted_scores)]
    if np.any(np.diff(finite_sorted) <= 0):
        raise DuplicateFiniteScore(
            "finite scores collide; pass jitter_seed to break ties at random"
        )

    membership = (order < n).astype(np.int8)
    calib_above = n - np.concatenate([[0], np.cumsum(membership)])
    z_all = _stack_diversifiers([s.z for s in calib] + [s.z for s in test])

    return ScoreState(
        sorted_scores=sorted_scores,
        membership=membership,
        sorted_z=z_all[order],
        origin=order,
        n=n,
        m=m,
        calib_above=calib_above.astype(int),
    )
