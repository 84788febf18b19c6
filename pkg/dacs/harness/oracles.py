"""Slow reference implementations used to cross-check the fast engines.

Every oracle here takes a different route to the same number: exhaustive enumeration,
exact integer arithmetic or a general-purpose scipy solver.
"""
import itertools
import math
from typing import Dict, Tuple

import numpy as np
from scipy.optimize import brentq, minimize, minimize_scalar

from dacs.engine.conformal import bh_selection_p_values, conformal_p_values, cs_selection, e_values_at, is_self_consistent
from dacs.engine.diversity import Markowitz, Sharpe, Underrep, encode_categories, eval_set
from dacs.engine.solvers import project_capped_simplex
from dacs.engine.stopping import StageTable
from dacs.models.state import ScoreState


def best_self_consistent_underrep(state: ScoreState, tau: int, alpha: float, n_categories: int) -> float:
    """Largest underrepresentation index over every self-consistent subset at time tau."""
    metric = Underrep(n_categories)
    e = e_values_at(state, tau)
    codes = np.empty(state.m, dtype=int)
    is_test = state.membership == 0
    codes[state.origin[is_test] - state.n] = encode_categories(state.sorted_z, n_categories)[is_test]
    candidates = e.support.tolist()
    best = metric.empty_value
    for size in range(1, len(candidates) + 1):
        for subset in itertools.combinations(candidates, size):
            if is_self_consistent(subset, e, alpha, state.m):
                best = max(best, eval_set(metric, subset, z=codes))
    return best


def multivariate_hypergeom_min_survival(counts, draws: int, nu_max: int) -> np.ndarray:
    """P(min_c H_c >= nu) by exact integer polynomial products."""
    counts = [int(c) for c in counts]
    total_ways = math.comb(sum(counts), draws)
    out = np.zeros(nu_max)
    for nu in range(1, nu_max + 1):
        poly = [1]
        for c in counts:
            factor = [math.comb(c, h) if h >= nu else 0 for h in range(c + 1)]
            merged = [0] * (len(poly) + len(factor) - 1)
            for i, a in enumerate(poly):
                if a:
                    for j, b in enumerate(factor):
                        merged[i + j] += a * b
            poly = merged
        ways = poly[draws] if draws < len(poly) else 0
        out[nu - 1] = ways / total_ways
    return out


def exhaustive_snell(rewards: StageTable, n: int, tau_bh: int, N_tau_bh: int) -> Dict[Tuple[int, int], float]:
    """Optimal expected reward from every cell, by walking the tree of revealed suffixes.

    At time t the suffix B_{t+1..tau} is known. Continuation probabilities come from counting
    the prefixes compatible with the revealed suffix, and no two histories are merged.
    """
    values: Dict[Tuple[int, int], float] = {}

    def value(t: int, suffix: Tuple[int, ...]) -> float:
        s = N_tau_bh + sum(suffix)
        ones_below = n - s
        reward = rewards.get(t, s)
        if t == 1:
            result = reward
        else:
            total = math.comb(t, ones_below)
            cont = 0.0
            for bit in (0, 1):
                rest = ones_below - bit
                if rest < 0 or rest > t - 1:
                    continue
                weight = math.comb(t - 1, rest) / total
                if weight > 0:
                    cont += weight * value(t - 1, (bit,) + suffix)
            result = max(reward, cont)
        values.setdefault((t, s), result)
        return result

    value(tau_bh, ())
    return values


def capped_simplex_by_root(y: np.ndarray, cap: float, total: float) -> np.ndarray:
    """Projection via a scalar root search on the water level."""
    y = np.asarray(y, dtype=float)
    if total <= 0:
        return np.zeros_like(y)
    if total >= cap * y.size:
        return np.full_like(y, cap)
    h = lambda mu: np.clip(y - mu, 0.0, cap).sum() - total
    mu = brentq(h, y.min() - cap - 1.0, y.max() + 1.0, xtol=1e-14)
    return np.clip(y - mu, 0.0, cap)


def rsc_projection_by_scan(y: np.ndarray, kappa: float) -> np.ndarray:
    """Projection onto {0 <= x <= 1, x <= kappa sum(x)} by minimizing over s = sum(x).

    For fixed s the feasible slice is a capped simplex, and the squared distance to the slice
    is convex in s, so a bounded scalar search on each side of 1/kappa finds the optimum.
    """
    y = np.asarray(y, dtype=float)
    d = y.size
    if kappa >= 1:
        return np.clip(y, 0.0, 1.0)
    if kappa * d < 1:
        return np.zeros_like(y)

    def project(s: float) -> np.ndarray:
        return capped_simplex_by_root(y, min(kappa * s, 1.0), s)

    def dist(s: float) -> float:
        return float(np.sum((project(s) - y) ** 2))

    best_s, best_val = 0.0, float(np.sum(y ** 2))
    for lo, hi in ((0.0, 1.0 / kappa), (1.0 / kappa, float(d))):
        res = minimize_scalar(dist, bounds=(lo, hi), method="bounded", options={"xatol": 1e-12})
        for s in (res.x, lo, hi):
            val = dist(s)
            if val < best_val:
                best_s, best_val = s, val
    return project(best_s)


def relaxed_program_by_slsqp(metric, sigma: np.ndarray, kappa: float, starts: int = 8, seed: int = 0) -> float:
    """Relaxed optimum with scipy's SLSQP, best of several random starts.

    Returns the relaxed objective: chi'1 - (gamma/2) chi'S chi for Markowitz and
    chi'1 / sqrt(chi'S chi) for Sharpe.
    """
    p = sigma.shape[0]
    rng = np.random.default_rng(seed)
    rsc = {"type": "ineq", "fun": lambda x: kappa * np.sum(x) - x, "jac": lambda x: kappa * np.ones((p, p)) - np.eye(p)}
    best = -np.inf
    for _ in range(starts):
        x0 = rng.uniform(0, 1, p)
        if isinstance(metric, Markowitz):
            g = metric.gamma
            res = minimize(
                lambda x: g / 2 * x @ sigma @ x - x.sum(),
                x0,
                jac=lambda x: g * sigma @ x - 1,
                bounds=[(0.0, 1.0)] * p,
                constraints=[rsc],
                method="SLSQP",
                options={"ftol": 1e-14, "maxiter": 2000},
            )
            if res.success:
                best = max(best, -float(res.fun))
        elif isinstance(metric, Sharpe):
            cap = min(kappa, 1.0)
            res = minimize(
                lambda x: x @ sigma @ x,
                x0 / x0.sum(),
                jac=lambda x: 2 * sigma @ x,
                bounds=[(0.0, cap)] * p,
                constraints=[{"type": "eq", "fun": lambda x: np.sum(x) - 1.0}],
                method="SLSQP",
                options={"ftol": 1e-14, "maxiter": 2000},
            )
            if res.success:
                best = max(best, 1.0 / math.sqrt(float(res.fun)))
    return best


def box_qp_by_enumeration(Q: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Minimize 0.5 x'Qx + c'x over [0, 1]^d by trying every active-set pattern."""
    d = c.size
    best_x, best_val = None, np.inf
    for pattern in itertools.product((0, 1, 2), repeat=d):
        pattern = np.array(pattern)
        x = np.where(pattern == 1, 1.0, 0.0)
        free = np.flatnonzero(pattern == 2)
        if free.size:
            fixed = np.flatnonzero(pattern != 2)
            rhs = -(c[free] + Q[np.ix_(free, fixed)] @ x[fixed])
            try:
                x[free] = np.linalg.solve(Q[np.ix_(free, free)], rhs)
            except np.linalg.LinAlgError:
                continue
        if np.any(x < -1e-12) or np.any(x > 1 + 1e-12):
            continue
        val = 0.5 * x @ Q @ x + c @ x
        if val < best_val:
            best_x, best_val = np.clip(x, 0.0, 1.0), val
    return best_x


def brute_force_capped_check(y, cap, total) -> float:
    """Distance between the fast capped-simplex projection and the root-search one."""
    return float(np.max(np.abs(project_capped_simplex(y, cap, total) - capped_simplex_by_root(y, cap, total))))


def cs_agrees_with_bh(state: ScoreState, alpha: float) -> bool:
    """Conformal selection equals Benjamini-Hochberg run on the conformal p-values."""
    cs = np.sort(cs_selection(state, alpha))
    bh = bh_selection_p_values(conformal_p_values(state), alpha)
    return bool(np.array_equal(cs, bh))
