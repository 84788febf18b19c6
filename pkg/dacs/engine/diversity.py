"""Diversity metrics on index sets and on their [0, 1] relaxations, plus similarity kernels."""
import logging
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import pdist, squareform

from dacs.errors import (
    AllZeroFingerprint,
    DataError,
    DegenerateBandwidth,
    NotPositiveDefinite,
    UnsupportedRelaxation,
)

logger = logging.getLogger(__name__)

PD_TOL = 1e-10
RIDGE_FLOOR = 1e-8


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """Symmetric positive definite similarity matrix.

    ``ridge`` records the multiple of the identity added by ``regularized``.
    """
    entries: np.ndarray
    ridge: float = 0.0

    def __post_init__(self):
        a = np.asarray(self.entries, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DataError(f"similarity matrix must be square, got shape {a.shape}")
        if not np.allclose(a, a.T, atol=1e-12):
            raise DataError("similarity matrix must be symmetric")
        if np.any(np.diag(a) <= 0):
            raise NotPositiveDefinite("similarity matrix needs a positive diagonal")
        lam_min = float(np.linalg.eigvalsh(a)[0]) if a.size else 1.0
        if lam_min <= PD_TOL:
            raise NotPositiveDefinite(f"smallest eigenvalue {lam_min:.3e} is not positive")
        object.__setattr__(self, "entries", a)

    @classmethod
    def regularized(cls, entries: np.ndarray, floor: float = RIDGE_FLOOR) -> "SimilarityMatrix":
        """Add ridge jitter lambda * I with lambda = max(0, floor - lambda_min)."""
        a = np.asarray(entries, dtype=float)
        a = (a + a.T) / 2
        lam_min = float(np.linalg.eigvalsh(a)[0])
        ridge = max(0.0, floor - lam_min)
        if ridge > 0:
            logger.info(f"Adding ridge {ridge:.3e} to similarity matrix (lambda_min={lam_min:.3e})")
            a = a + ridge * np.eye(a.shape[0])
        return cls(a, ridge=ridge)

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def sub(self, idx: Sequence[int]) -> np.ndarray:
        idx = np.asarray(idx, dtype=int)
        return self.entries[np.ix_(idx, idx)]


@dataclass(frozen=True)
class Underrep:
    """Share of the least represented of C categories; -1/C on the empty set."""
    n_categories: int

    def __post_init__(self):
        if self.n_categories < 2:
            raise DataError("underrepresentation index needs at least two categories")

    @property
    def empty_value(self) -> float:
        return -1.0 / self.n_categories


@dataclass(frozen=True)
class Sharpe:
    """|S| / sqrt(1_S' Sigma 1_S)."""
    sigma: SimilarityMatrix
    empty_value: float = 0.0


@dataclass(frozen=True)
class Markowitz:
    """|S| - (gamma / 2) 1_S' Sigma 1_S."""
    sigma: SimilarityMatrix
    gamma: float
    empty_value: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise DataError("Markowitz gamma must be positive")


DiversityMetric = Union[Underrep, Sharpe, Markowitz]
SigmaLike = Union[SimilarityMatrix, np.ndarray]


def _dense(sigma: SigmaLike) -> np.ndarray:
    return sigma.entries if isinstance(sigma, SimilarityMatrix) else np.asarray(sigma, dtype=float)


def encode_categories(labels: Sequence, n_categories: int) -> np.ndarray:
    """Map category labels to codes 0..C-1.

    Integer labels in 1..C map to label - 1; anything else is ranked by sorted unique value.
    """
    arr = np.asarray(list(labels), dtype=object)
    if arr.size and all(isinstance(v, (int, np.integer)) for v in arr):
        codes = arr.astype(int) - 1
        if codes.min() >= 0 and codes.max() < n_categories:
            return codes
    uniques, codes = np.unique(arr.astype(str), return_inverse=True)
    if uniques.size > n_categories:
        raise DataError(f"found {uniques.size} categories but the metric declares {n_categories}")
    return codes.astype(int)


def eval_set(
    metric: DiversityMetric,
    S: Iterable[int],
    z: Optional[np.ndarray] = None,
    sigma: Optional[SigmaLike] = None,
) -> float:
    """Diversity of the index set S.

    For Underrep, ``z`` holds category codes indexed like S. For Sharpe and Markowitz, S
    indexes the rows of ``sigma`` (the metric's own matrix when omitted).
    """
    idx = np.fromiter(S, dtype=int)
    if isinstance(metric, Underrep):
        if idx.size == 0:
            return metric.empty_value
        counts = np.bincount(np.asarray(z)[idx].astype(int), minlength=metric.n_categories)
        return float(counts.min() / idx.size)
    if idx.size == 0:
        return 0.0
    mat = _dense(metric.sigma if sigma is None else sigma)
    quad = float(mat[np.ix_(idx, idx)].sum())
    if isinstance(metric, Sharpe):
        return idx.size / np.sqrt(quad)
    return idx.size - metric.gamma / 2 * quad


def eval_relaxed(metric: DiversityMetric, chi: np.ndarray, sigma: Optional[SigmaLike] = None) -> float:
    """Relaxed objective at chi in [0, 1]^p."""
    if isinstance(metric, Underrep):
        raise UnsupportedRelaxation("the underrepresentation index has no relaxed extension")
    chi = np.asarray(chi, dtype=float)
    mat = _dense(metric.sigma if sigma is None else sigma)
    quad = float(chi @ mat @ chi)
    if isinstance(metric, Sharpe):
        return 0.0 if quad <= 0 else float(chi.sum() / np.sqrt(quad))
    return float(chi.sum() - metric.gamma / 2 * quad)


def expected_rounded_markowitz(chi: np.ndarray, sigma: SigmaLike, gamma: float) -> float:
    """E[xi'1 - (gamma/2) xi' Sigma xi] for independent xi_i ~ Bern(chi_i)."""
    chi = np.asarray(chi, dtype=float)
    mat = _dense(sigma)
    diag = np.diag(mat)
    second = chi @ mat @ chi + diag @ chi - diag @ (chi * chi)
    return float(chi.sum() - gamma / 2 * second)


def expected_rounded_sharpe_mc(
    chi: np.ndarray,
    sigma: SigmaLike,
    n_draws: int,
    seed: Union[int, np.random.Generator, None] = None,
) -> float:
    """Monte Carlo mean Sharpe ratio of Bernoulli(chi) roundings."""
    if n_draws < 1:
        raise ValueError("n_draws must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    chi = np.asarray(chi, dtype=float)
    mat = _dense(sigma)
    xi = (rng.random((n_draws, chi.size)) < chi).astype(float)
    sizes = xi.sum(axis=1)
    quad = np.einsum("ki,ij,kj->k", xi, mat, xi)
    values = np.divide(sizes, np.sqrt(quad), out=np.zeros_like(sizes), where=sizes > 0)
    return float(values.mean())


def rbf_similarity(z_vectors: np.ndarray, bandwidth: Union[float, str] = "auto") -> SimilarityMatrix:
    """RBF kernel exp(-|z_i - z_j|^2 / (2 b^2)); ``auto`` uses the median pairwise distance."""
    z = np.asarray(z_vectors, dtype=float)
    if z.ndim == 1:
        z = z[:, None]
    dists = pdist(z)
    if bandwidth == "auto":
        b = float(np.median(dists)) if dists.size else 0.0
        if b <= 0:
            raise DegenerateBandwidth("median pairwise distance is zero")
    else:
        b = float(bandwidth)
        if b <= 0:
            raise DataError("bandwidth must be positive")
    kernel = np.exp(-squareform(dists) ** 2 / (2 * b ** 2))
    logger.debug(f"RBF similarity on {z.shape[0]} points with bandwidth {b:.4g}")
    return SimilarityMatrix.regularized(kernel)


def tanimoto_similarity(fingerprints: np.ndarray) -> SimilarityMatrix:
    """Tanimoto coefficients |a & b| / |a | b| between binary fingerprints."""
    f = np.asarray(fingerprints).astype(bool).astype(float)
    counts = f.sum(axis=1)
    if np.any(counts == 0):
        raise AllZeroFingerprint(f"fingerprint rows {np.flatnonzero(counts == 0).tolist()} are all zero")
    inter = f @ f.T
    union = counts[:, None] + counts[None, :] - inter
    return SimilarityMatrix.regularized(inter / union)


def markowitz_gamma_hint(sigma: SigmaLike) -> float:
    """2 / lambda_max(Sigma), a reasonable scale for gamma."""
    return 2.0 / float(np.linalg.eigvalsh(_dense(sigma))[-1])
