"""Randomized cross-checks of the fast engines against the slow oracles."""
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List

import numpy as np

from dacs.engine.conformal import bh_stopping_time
from dacs.engine.diversity import Markowitz, Sharpe, SimilarityMatrix, Underrep
from dacs.engine.pipeline import selection_diversity
from dacs.engine.relaxed import RelaxedProgram, solve_relaxed
from dacs.engine.solvers import PgdConfig, pgd_minimize, project_capped_simplex, project_rsc
from dacs.engine.stopping import StageTable, optimal_stopping_time, snell_envelope
from dacs.engine.underrep import greedy_underrep_select, min_survival_fft
from dacs.harness.oracles import (
    best_self_consistent_underrep,
    box_qp_by_enumeration,
    capped_simplex_by_root,
    cs_agrees_with_bh,
    exhaustive_snell,
    multivariate_hypergeom_min_survival,
    relaxed_program_by_slsqp,
    rsc_projection_by_scan,
)
from dacs.models.samples import CalibrationSample, TestSample
from dacs.models.state import ScoreState, build_score_state

logger = logging.getLogger(__name__)

TIGHT_PGD = PgdConfig(tol=1e-13, patience=20, max_iters=50_000)


@dataclass
class SuiteResult:
    name: str
    instances: int = 0
    failures: int = 0
    max_error: float = 0.0
    tolerance: float = 0.0
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.failures == 0

    def record(self, error: float, note: str = "") -> None:
        self.instances += 1
        self.max_error = max(self.max_error, float(error))
        if not error <= self.tolerance:
            self.failures += 1
            if note and len(self.notes) < 5:
                self.notes.append(note)

    def to_dict(self) -> Dict:
        return {
            "passed": self.passed,
            "instances": self.instances,
            "failures": self.failures,
            "max_error": self.max_error,
            "tolerance": self.tolerance,
            "notes": self.notes,
        }


def random_categorical_state(rng: np.random.Generator, n: int, m: int, n_categories: int) -> ScoreState:
    """Small instance with categorical z and distinct finite scores."""
    calib = [
        CalibrationSample(z=int(rng.integers(1, n_categories + 1)), mu_hat=float(rng.normal()), y=float(rng.normal()))
        for _ in range(n)
    ]
    test = [TestSample(z=int(rng.integers(1, n_categories + 1)), mu_hat=float(rng.normal())) for _ in range(m)]
    return build_score_state(calib, test)


def greedy_suite(instances: int, rng: np.random.Generator) -> SuiteResult:
    suite = SuiteResult("greedy_underrep", tolerance=0.0)
    while suite.instances < instances:
        C = int(rng.integers(2, 4))
        state = random_categorical_state(rng, int(rng.integers(3, 15)), int(rng.integers(1, 11)), C)
        alpha = float(rng.uniform(0.2, 0.9))
        tau_bh = bh_stopping_time(state, alpha)
        if tau_bh == 0:
            continue
        tau = int(rng.integers(1, tau_bh + 1))
        selected = greedy_underrep_select(state, tau, alpha, C)
        fast = selection_diversity(Underrep(C), selected, state)
        slow = best_self_consistent_underrep(state, tau, alpha, C)
        suite.record(abs(fast - slow), f"tau={tau} greedy={fast} exhaustive={slow}")
    return suite


def snell_suite(instances: int, rng: np.random.Generator) -> SuiteResult:
    suite = SuiteResult("snell_envelope", tolerance=1e-10)
    for _ in range(instances):
        tau = int(rng.integers(1, 13))
        n = int(rng.integers(1, 15))
        ones = int(rng.integers(0, min(n, tau) + 1))
        N_tau = n - ones
        rewards = StageTable.empty(np.arange(1, tau + 1), tau, N_tau, n)
        for q in range(len(rewards.rows)):
            rewards.rows[q] = rng.uniform(-1, 1, rewards.rows[q].size)
        snell = snell_envelope(rewards, n)
        brute = exhaustive_snell(rewards, n, tau, N_tau)
        error = max(abs(snell.get(t, s) - v) for (t, s), v in brute.items())

        # one realized path: N_t = N_tau + calibration count among positions t+1..tau
        b = np.zeros(tau, dtype=int)
        b[rng.choice(tau, size=ones, replace=False)] = 1
        observed = N_tau + np.concatenate([np.cumsum(b[::-1])[::-1], [0]])
        tau_star = optimal_stopping_time(rewards, snell, observed)
        brute_star = max(t for t in range(1, tau + 1) if rewards.get(t, observed[t]) >= brute[(t, int(observed[t]))])
        if tau_star != brute_star:
            error = max(error, 1.0)
        suite.record(error, f"tau={tau} n={n} ones={ones} tau*={tau_star} vs {brute_star}")
    return suite


def survival_suite(instances: int, rng: np.random.Generator) -> SuiteResult:
    suite = SuiteResult("hypergeom_survival", tolerance=1e-9)
    for _ in range(instances):
        C = int(rng.integers(2, 5))
        counts = rng.integers(1, 31, size=C)
        draws = int(rng.integers(0, counts.sum() + 1))
        nu_max = int(counts.min())
        fast = min_survival_fft(counts, draws, nu_max)
        slow = multivariate_hypergeom_min_survival(counts, draws, nu_max)
        suite.record(float(np.max(np.abs(fast - slow))), f"counts={counts.tolist()} draws={draws}")
    return suite


def projection_suite(instances: int, rng: np.random.Generator) -> SuiteResult:
    suite = SuiteResult("projections", tolerance=1e-6)
    for _ in range(instances):
        d = int(rng.integers(1, 7))
        y = rng.normal(0.5, 1.0, d)
        kappa = float(rng.uniform(0.05, 1.2))
        error = float(np.max(np.abs(project_rsc(y, kappa) - rsc_projection_by_scan(y, kappa))))
        cap = float(rng.uniform(0.1, 1.0))
        total = float(rng.uniform(0.0, cap * d))
        error = max(error, float(np.max(np.abs(project_capped_simplex(y, cap, total) - capped_simplex_by_root(y, cap, total)))))
        suite.record(error, f"d={d} kappa={kappa:.4f} cap={cap:.4f} total={total:.4f}")
    return suite


def _random_sigma(rng: np.random.Generator, p: int) -> SimilarityMatrix:
    z = rng.normal(size=(p, 2))
    sq = np.sum((z[:, None, :] - z[None, :, :]) ** 2, axis=2)
    return SimilarityMatrix.regularized(np.exp(-sq / 2) + 0.05 * np.eye(p))


def pgd_suite(instances: int, rng: np.random.Generator) -> SuiteResult:
    suite = SuiteResult("relaxed_pgd", tolerance=1e-5)
    for _ in range(instances):
        p = int(rng.integers(2, 7))
        sigma = _random_sigma(rng, p)
        kappa = float(rng.uniform(1.0 / p, 1.0))
        alpha, m = 0.3, 20
        metric = Sharpe(sigma) if rng.random() < 0.5 else Markowitz(sigma, float(rng.uniform(0.2, 1.5)))
        program = RelaxedProgram(
            metric=metric, beta=kappa * m / alpha, active=np.arange(p), sigma=sigma.entries, alpha=alpha, m=m
        )
        cold = solve_relaxed(program, pgd=TIGHT_PGD)
        warm = solve_relaxed(program, warm_start=rng.uniform(0, 1, p), pgd=TIGHT_PGD)
        oracle = relaxed_program_by_slsqp(metric, sigma.entries, program.kappa, seed=int(rng.integers(1 << 30)))
        error = max(abs(cold.objective - oracle), abs(warm.objective - cold.objective))
        if not (program.contains(cold.chi, 1e-9) and program.contains(warm.chi, 1e-9)):
            error = max(error, 1.0)
        suite.record(error, f"{type(metric).__name__} p={p} kappa={kappa:.4f}: {cold.objective} vs {oracle}")

    for _ in range(instances):
        d = int(rng.integers(1, 7))
        A = rng.normal(size=(d, d))
        Q = A @ A.T + 0.1 * np.eye(d)
        c = rng.normal(0, 2, d)
        result = pgd_minimize(
            grad_fn=lambda x: Q @ x + c,
            objective_fn=lambda x: 0.5 * float(x @ Q @ x) + float(c @ x),
            project_fn=lambda v: np.clip(v, 0.0, 1.0),
            x0=np.full(d, 0.5),
            config=TIGHT_PGD,
        )
        best = box_qp_by_enumeration(Q, c)
        gap = (0.5 * result.x @ Q @ result.x + c @ result.x) - (0.5 * best @ Q @ best + c @ best)
        suite.record(abs(float(gap)), f"box d={d}")
    return suite


def bh_suite(instances: int, rng: np.random.Generator) -> SuiteResult:
    suite = SuiteResult("cs_equals_bh", tolerance=0.0)
    for _ in range(instances):
        state = random_categorical_state(rng, int(rng.integers(1, 40)), int(rng.integers(1, 30)), 2)
        alpha = float(rng.uniform(0.05, 0.95))
        suite.record(0.0 if cs_agrees_with_bh(state, alpha) else 1.0, f"n={state.n} m={state.m} alpha={alpha:.3f}")
    return suite


SUITES: Dict[str, Callable[[int, np.random.Generator], SuiteResult]] = {
    "greedy": greedy_suite,
    "snell": snell_suite,
    "survival": survival_suite,
    "projections": projection_suite,
    "pgd": pgd_suite,
    "bh": bh_suite,
}


def run_validation(instances: int = 50, seed: int = 0, suites: List[str] = None) -> Dict:
    """Run the selected suites; the report is JSON-serializable."""
    names = suites or list(SUITES)
    report = {"seed": seed, "instances": instances, "suites": {}}
    for name in names:
        rng = np.random.default_rng([seed, list(SUITES).index(name)])
        result = SUITES[name](instances, rng)
        level = logging.INFO if result.passed else logging.ERROR
        logger.log(level, f"Suite {name}: {result.failures} failure(s) in {result.instances} instances, max error {result.max_error:.3e}")
        report["suites"][name] = result.to_dict()
    report["passed"] = all(s["passed"] for s in report["suites"].values())
    return report
