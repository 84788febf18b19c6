"""Accelerated projected gradient descent and the two projection oracles it needs."""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Union

import numpy as np
from prometheus_client import Counter
from pydantic import BaseModel, Field

from dacs.errors import Infeasible, SolverDiverged

logger = logging.getLogger(__name__)

# Prometheus metrics
pgd_solves = Counter("dacs_pgd_solves", "Number of projected gradient descent runs")
pgd_restarts = Counter("dacs_pgd_restarts", "Number of adaptive momentum restarts")

FEAS_TOL = 1e-12


class PgdConfig(BaseModel):
    """Knobs of the accelerated projected gradient solver."""
    max_iters: int = Field(default=10_000, ge=1)
    tol: float = Field(default=1e-9, gt=0)
    patience: int = Field(default=5, ge=1)
    initial_step: float = Field(default=1.0, gt=0)
    shrink: float = Field(default=0.5, gt=0, lt=1)
    min_step: float = Field(default=1e-20, gt=0)
    restart: bool = True


@dataclass
class PgdResult:
    x: np.ndarray
    objective: float
    iterations: int
    restarts: int
    converged: bool
    history: List[float] = field(default_factory=list, repr=False)


def pgd_minimize(
    grad_fn: Callable[[np.ndarray], np.ndarray],
    objective_fn: Callable[[np.ndarray], float],
    project_fn: Callable[[np.ndarray], np.ndarray],
    x0: np.ndarray,
    config: PgdConfig = PgdConfig(),
) -> PgdResult:
    """Minimize a smooth convex function over a convex set.

    Momentum updates follow the FISTA recursion with backtracking on the step. With
    ``config.restart`` the momentum is reset whenever (y^k - x^{k+1})'(x^{k+1} - x^k) > 0,
    and a step that raises the objective is discarded and retried from x^k without
    momentum, so the accepted iterates never increase the objective.
    """
    pgd_solves.inc()
    x = project_fn(np.asarray(x0, dtype=float))
    y = x.copy()
    theta = 1.0
    step = config.initial_step
    f_x = objective_fn(x)
    history = [f_x]
    restarts = 0
    stall = 0
    fresh = True

    for k in range(1, config.max_iters + 1):
        g = grad_fn(y)
        f_y = objective_fn(y)
        while True:
            x_new = project_fn(y - step * g)
            d = x_new - y
            f_new = objective_fn(x_new)
            bound = f_y + g @ d + (d @ d) / (2 * step)
            if f_new <= bound + 1e-12 * max(1.0, abs(f_y)) or step <= config.min_step:
                break
            step *= config.shrink

        if not math.isfinite(f_new):
            logger.error(f"PGD objective became non-finite at iteration {k}")
            raise SolverDiverged(f"objective is {f_new} at iteration {k}")

        if config.restart and not fresh and f_new > f_x + 1e-12 * max(1.0, abs(f_x)):
            # monotone safeguard: drop the step and restart momentum at x
            y = x.copy()
            theta = 1.0
            restarts += 1
            pgd_restarts.inc()
            fresh = True
            continue
        fresh = False

        theta_new = (1 + math.sqrt(1 + 4 * theta ** 2)) / 2
        beta = (theta - 1) / theta_new
        if config.restart and (y - x_new) @ (x_new - x) > 0:
            y = x_new.copy()
            theta = 1.0
            restarts += 1
            pgd_restarts.inc()
        else:
            y = x_new + beta * (x_new - x)
            theta = theta_new

        change = abs(f_new - f_x) / max(1.0, abs(f_x))
        x, f_x = x_new, f_new
        history.append(f_x)
        stall = stall + 1 if change < config.tol else 0
        if stall >= config.patience:
            return PgdResult(x, f_x, k, restarts, True, history)

    logger.error(f"PGD did not converge in {config.max_iters} iterations (last f={f_x:.6g})")
    raise SolverDiverged(f"no convergence after {config.max_iters} iterations")


def project_capped_simplex(y: np.ndarray, cap: Union[float, np.ndarray], total: float) -> np.ndarray:
    """Euclidean projection onto {0 <= x <= cap, sum(x) = total} by breakpoint search."""
    y = np.asarray(y, dtype=float)
    cap = np.broadcast_to(np.asarray(cap, dtype=float), y.shape)
    cap_sum = float(cap.sum())
    if total < -FEAS_TOL or total > cap_sum * (1 + FEAS_TOL) + FEAS_TOL or np.any(cap < 0):
        raise Infeasible(f"total {total} is outside [0, {cap_sum}]")
    if total <= 0:
        return np.zeros_like(y)
    if total >= cap_sum:
        return cap.copy()

    # h(mu) = sum clip(y - mu, 0, cap) is nonincreasing and piecewise linear in mu
    breaks = np.unique(np.concatenate([y, y - cap]))
    h = np.clip(y[None, :] - breaks[:, None], 0.0, cap[None, :]).sum(axis=1)
    j = int(np.searchsorted(-h, -total, side="right")) - 1
    j = min(max(j, 0), breaks.size - 2)
    h_lo, h_hi = h[j], h[j + 1]
    if h_lo == h_hi:
        mu = breaks[j]
    else:
        mu = breaks[j] + (h_lo - total) / (h_lo - h_hi) * (breaks[j + 1] - breaks[j])
    return np.clip(y - mu, 0.0, cap)


def feasibility_check(e_nonzero_value: float, nonzero_count: int, alpha: float, m: int) -> bool:
    """A nonzero relaxed self-consistent vector exists iff beta >= m / (alpha * count)."""
    if nonzero_count <= 0:
        return False
    return e_nonzero_value >= m / (alpha * nonzero_count) * (1 - FEAS_TOL)


def _interval(g0: np.ndarray, g1: np.ndarray, lo: np.ndarray, hi: np.ndarray):
    """s-interval on which lo <= g0 + g1 s <= hi, elementwise; empty rows get lower > upper."""
    with np.errstate(divide="ignore", invalid="ignore"):
        a = (lo - g0) / g1
        b = (hi - g0) / g1
    lower = np.where(g1 > 0, a, np.where(g1 < 0, b, -np.inf))
    upper = np.where(g1 > 0, b, np.where(g1 < 0, a, np.inf))
    flat_ok = (g0 >= lo - 1e-12) & (g0 <= hi + 1e-12)
    lower = np.where((g1 == 0) & ~flat_ok, np.inf, lower)
    upper = np.where((g1 == 0) & ~flat_ok, -np.inf, upper)
    lower = np.nan_to_num(lower, nan=-np.inf)
    upper = np.nan_to_num(upper, nan=np.inf)
    return lower, upper


def _sweep(ys, p1, p2, kappa, low: bool):
    """Best (value, s, mu) over middle blocks [l, k] of the sorted vector on one s-interval.

    On the low interval the cap is u = kappa s with s in [0, 1/kappa]; on the high interval
    u = 1 with s in [1/kappa, d].
    """
    d = ys.size
    ext = np.concatenate([[-np.inf], ys, [np.inf]])
    # middle entries satisfy mu < y < mu + u <= mu + 1, so y_(k) - y_(l) <= 1
    reach = np.searchsorted(ys, ys + 1.0 + 1e-12, side="right")
    l_idx = np.repeat(np.arange(1, d + 1), reach - np.arange(d))
    k_idx = np.concatenate([np.arange(l, r + 1) for l, r in zip(range(1, d + 1), reach)])

    p = (k_idx - l_idx + 1).astype(float)
    q = (d - k_idx).astype(float)
    A = p1[k_idx] - p1[l_idx - 1]
    zero_sq = p2[l_idx - 1]
    cap_s1 = p1[d] - p1[k_idx]
    cap_s2 = p2[d] - p2[k_idx]
    if low:
        u0, u1, s_lo, s_hi = 0.0, kappa, 0.0, 1.0 / kappa
    else:
        u0, u1, s_lo, s_hi = 1.0, 0.0, 1.0 / kappa, float(d)

    # mu(s) = a0 + a1 s, u(s) = u0 + u1 s
    a0 = (A + q * u0) / p
    a1 = (q * u1 - 1.0) / p
    lo1, up1 = _interval(a0, a1, ext[l_idx - 1], ext[l_idx])
    lo2, up2 = _interval(a0 + u0, a1 + u1, ext[k_idx], ext[k_idx + 1])
    L = np.maximum.reduce([lo1, lo2, np.full_like(a0, s_lo)])
    U = np.minimum.reduce([up1, up2, np.full_like(a0, s_hi)])
    ok = L <= U + 1e-12
    if not np.any(ok):
        return np.inf, 0.0, 0.0, u0, u1

    c2 = q * u1 ** 2 + p * a1 ** 2
    c1 = 2 * q * u0 * u1 - 2 * u1 * cap_s1 + 2 * p * a0 * a1
    c0 = zero_sq + q * u0 ** 2 - 2 * u0 * cap_s1 + cap_s2 + p * a0 ** 2
    # rows outside ok carry infinite bounds; their values are discarded
    with np.errstate(over="ignore", invalid="ignore"):
        s_star = np.clip(-c1 / (2 * c2), L, np.maximum(L, U))
        value = c2 * s_star ** 2 + c1 * s_star + c0
    value = np.where(ok, value, np.inf)
    best = int(np.argmin(value))
    return float(value[best]), float(s_star[best]), float(a0[best] + a1[best] * s_star[best]), u0, u1


def project_rsc(y: np.ndarray, kappa: float) -> np.ndarray:
    """Euclidean projection onto {0 <= x <= 1, x_i <= kappa * sum(x)}."""
    y = np.asarray(y, dtype=float)
    d = y.size
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if d == 0:
        return y.copy()
    if kappa >= 1:
        return np.clip(y, 0.0, 1.0)
    if kappa * d < 1 - FEAS_TOL:
        return np.zeros_like(y)

    order = np.argsort(y, kind="stable")
    ys = y[order]
    p1 = np.concatenate([[0.0], np.cumsum(ys)])
    p2 = np.concatenate([[0.0], np.cumsum(ys ** 2)])

    # candidates as (squared distance, builder)
    best_val = float(p2[d])
    best_x = np.zeros(d)

    for low in (True, False):
        val, s, mu, u0, u1 = _sweep(ys, p1, p2, kappa, low)
        if val < best_val:
            best_val = val
            best_x = np.clip(ys - mu, 0.0, u0 + u1 * s)

    # empty middle block: the top q entries share a common value v and the rest are zero
    q = np.arange(1, d + 1)
    top_s1 = p1[d] - p1[d - q]
    top_s2 = p2[d] - p2[d - q]
    bottom_sq = p2[d - q]
    eligible = kappa * q >= 1 - FEAS_TOL
    for v in (np.clip(top_s1 / q, 0.0, 1.0), np.ones(d)):
        vals = bottom_sq + top_s2 - 2 * v * top_s1 + q * v ** 2
        vals = np.where(eligible, vals, np.inf)
        j = int(np.argmin(vals))
        if vals[j] < best_val:
            best_val = float(vals[j])
            best_x = np.zeros(d)
            best_x[d - q[j]:] = v[j]

    x = np.empty(d)
    x[order] = best_x
    return x
