"""Replicate-level evaluation: FDP, power, diversity and sweeps over simulated datasets."""
import json
import logging
import uuid
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from dacs.engine.diversity import (
    DiversityMetric,
    Markowitz,
    Sharpe,
    Underrep,
    eval_set,
    markowitz_gamma_hint,
    rbf_similarity,
)
from dacs.engine.parallel import parallel_map, spawn_seeds
from dacs.engine.pipeline import run_cs, run_dacs
from dacs.engine.relaxed import baseline_relaxed_solutions, randomized_round
from dacs.errors import ConfigError
from dacs.harness.simulate import SimSetting, simulate
from dacs.models.replicate import ReplicateRowPydantic
from dacs.models.results import DacsConfig, ExactUnderrepMode, RelaxedMcMode
from dacs.models.state import ScoreState, build_score_state

logger = logging.getLogger(__name__)

REPLICATE_COLUMNS = [
    "setting", "replicate", "seed", "alpha", "method", "n_selected", "fdp", "power",
    "diversity", "normalized_diversity", "tau_star", "tau_bh", "subset_of_cs",
]
# varies run to run; excluded from the default CSVs
TIMING_COLUMNS = ["wall_time"]


def fdp_and_power(R: Sequence[int], truth_y: np.ndarray) -> Tuple[float, float]:
    """False discovery proportion and power of selection R against true responses."""
    idx = np.asarray(list(R), dtype=int)
    y = np.asarray(truth_y, dtype=float)
    positives = int(np.sum(y > 0))
    hits = int(np.sum(y[idx] > 0)) if idx.size else 0
    false = idx.size - hits
    return false / max(1, idx.size), hits / max(1, positives)


def baseline_cdf_normalize(
    diversity_value: float,
    solutions: Sequence[np.ndarray],
    D: int,
    metric: DiversityMetric,
    state: ScoreState,
    rng: np.random.Generator,
) -> float:
    """Empirical CDF of ``diversity_value`` among D roundings of each per-time relaxed solution."""
    if D < 1 or not solutions:
        raise ValueError("need at least one solution and one rounding per solution")
    draws = []
    for chi in solutions:
        for _ in range(D):
            positions = randomized_round(chi, rng)
            draws.append(eval_set(metric, state.origin[positions]))
    return float(np.mean(np.asarray(draws) <= diversity_value))


@dataclass
class SweepSpec:
    """What to run on every simulated dataset."""
    setting: SimSetting
    alphas: List[float]
    metric_kind: str = "underrep"
    gamma: Union[float, str, None] = None
    mode: Union[ExactUnderrepMode, RelaxedMcMode, None] = None
    baseline_draws: int = 0
    sweep_id: str = field(default_factory=lambda: uuid.uuid4().hex[:12])


def build_metric(spec: SweepSpec, z_pooled: np.ndarray) -> DiversityMetric:
    if spec.metric_kind == "underrep":
        if spec.setting.family != "underrep":
            raise ConfigError(f"setting {spec.setting.name} has no categories")
        return Underrep(spec.setting.n_categories)
    if z_pooled is None:
        raise ConfigError(f"setting {spec.setting.name} has categorical z; use the underrep metric")
    sigma = rbf_similarity(z_pooled)
    if spec.metric_kind == "sharpe":
        return Sharpe(sigma)
    if spec.metric_kind == "markowitz":
        if spec.gamma is None:
            raise ConfigError("markowitz needs a gamma (a positive number or \"auto\")")
        gamma = markowitz_gamma_hint(sigma) if spec.gamma == "auto" else float(spec.gamma)
        return Markowitz(sigma, gamma)
    raise ConfigError(f"unknown metric {spec.metric_kind}")


def run_replicate(args) -> List[Dict]:
    """All methods and levels on one simulated dataset; returns plain row dicts."""
    spec, replicate, seed = args
    data = simulate(spec.setting, seed)
    z_pooled = np.asarray([s.z for s in data.calib] + [s.z for s in data.test], dtype=float) \
        if spec.setting.family == "similarity" else None
    metric = build_metric(spec, z_pooled)
    if isinstance(metric, Underrep):
        mode = spec.mode if isinstance(spec.mode, ExactUnderrepMode) else ExactUnderrepMode()
    else:
        mode = spec.mode if isinstance(spec.mode, RelaxedMcMode) else RelaxedMcMode()
    state = build_score_state(data.calib, data.test) if spec.baseline_draws else None

    rows = []
    for alpha in spec.alphas:
        cs = run_cs(data.calib, data.test, alpha, metric=metric)
        dacs = run_dacs(data.calib, data.test, DacsConfig(alpha=alpha, metric=metric, mode=mode, seed=seed))
        cs_set = set(cs.selected.tolist())
        norm = {"cs": None, "dacs": None}
        if state is not None and not isinstance(metric, Underrep) and cs.diagnostics.tau_bh > 0:
            solutions = baseline_relaxed_solutions(state, metric, alpha, cs.diagnostics.tau_bh)
            for name, result in (("cs", cs), ("dacs", dacs)):
                rng = np.random.default_rng([seed, replicate, 7])
                norm[name] = baseline_cdf_normalize(
                    result.diagnostics.diversity, solutions, spec.baseline_draws, metric, state, rng
                )
        for name, result in (("cs", cs), ("dacs", dacs)):
            fdp, power = fdp_and_power(result.selected, data.truth)
            rows.append({
                "setting": spec.setting.name,
                "replicate": replicate,
                "seed": seed,
                "alpha": alpha,
                "method": name,
                "n_selected": int(result.selected.size),
                "fdp": fdp,
                "power": power,
                "diversity": result.diagnostics.diversity,
                "normalized_diversity": norm[name],
                "tau_star": result.tau_star,
                "tau_bh": result.diagnostics.tau_bh,
                "subset_of_cs": set(result.selected.tolist()) <= cs_set,
                "wall_time": float(sum(result.diagnostics.wall_times.values())),
            })
    return rows


@dataclass
class EvalReport:
    """Per-replicate rows plus per-(method, alpha) means and standard errors."""
    replicates: pd.DataFrame
    sweep_id: str

    def summary(self, timing: bool = True) -> pd.DataFrame:
        """Means and standard errors per (setting, method, alpha); ``timing`` adds wall_time columns."""
        metrics = ["fdp", "power", "diversity", "normalized_diversity", "n_selected", "tau_star"]
        frame = self.replicates.copy()
        frame["diversity_nonempty"] = frame["diversity"].where(frame["n_selected"] > 0)
        metrics.append("diversity_nonempty")
        if timing:
            metrics.extend(c for c in TIMING_COLUMNS if c in frame.columns)
        grouped = frame.groupby(["setting", "method", "alpha"], sort=True)
        parts = []
        for name in metrics:
            values = grouped[name].agg(["mean", "std", "count"])
            parts.append(pd.DataFrame({
                f"{name}_mean": values["mean"],
                f"{name}_se": values["std"] / np.sqrt(values["count"]),
            }))
        out = pd.concat(parts, axis=1)
        out["reps"] = grouped.size()
        return out.reset_index()

    def without_timing(self) -> pd.DataFrame:
        """Replicate rows minus the run-dependent timing columns."""
        return self.replicates.drop(columns=[c for c in TIMING_COLUMNS if c in self.replicates.columns])

    def rows(self) -> List[ReplicateRowPydantic]:
        records = json.loads(self.replicates.to_json(orient="records"))
        return [ReplicateRowPydantic(sweep_id=self.sweep_id, **r) for r in records]


def run_sweep(spec: SweepSpec, reps: int, master_seed: int = 0, workers: int = 1) -> EvalReport:
    seeds = spawn_seeds(master_seed, reps)
    jobs = [(spec, r, seed) for r, seed in enumerate(seeds)]
    logger.info(f"Running {reps} replicates of {spec.setting.name} at alpha={spec.alphas} on {workers} worker(s)")
    chunks = parallel_map(run_replicate, jobs, workers)
    frame = pd.DataFrame([row for chunk in chunks for row in chunk], columns=REPLICATE_COLUMNS + TIMING_COLUMNS)
    numeric = ["fdp", "power", "diversity", "normalized_diversity"] + TIMING_COLUMNS
    frame[numeric] = frame[numeric].apply(pd.to_numeric)
    return EvalReport(replicates=frame, sweep_id=spec.sweep_id)
