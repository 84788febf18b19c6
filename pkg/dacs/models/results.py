from dataclasses import dataclass, field
from typing import Any, Dict, List, Literal, Optional, Union

import numpy as np
from pydantic import BaseModel, Field, field_validator

from dacs.engine.conformal import EValueVector
from dacs.engine.diversity import DiversityMetric
from dacs.engine.solvers import PgdConfig


class ExactUnderrepMode(BaseModel):
    """Exact rewards and greedy final selection; only valid for the underrepresentation index."""
    kind: Literal["exact"] = "exact"
    # number of grid times for the coarse stopping problem; None keeps every time
    grid_size: Optional[int] = Field(default=None, ge=2)


class RelaxedMcMode(BaseModel):
    """Monte Carlo rewards from relaxed programs, optionally on a coarse time grid."""
    kind: Literal["relaxed"] = "relaxed"
    mc_draws: int = Field(default=50, ge=1)
    grid_size: int = Field(default=10, ge=2)
    rounding_draws: int = Field(default=50, ge=1)
    warm_start: bool = True


class DacsConfig(BaseModel):
    """Inputs of one DACS run besides the data."""
    alpha: float
    metric: Any
    mode: Union[ExactUnderrepMode, RelaxedMcMode] = Field(default_factory=ExactUnderrepMode)
    seed: int = 0
    workers: int = Field(default=1, ge=1)
    jitter_seed: Optional[int] = None
    pgd: PgdConfig = Field(default_factory=PgdConfig)
    keep_tables: bool = False

    model_config = {"arbitrary_types_allowed": True}

    @field_validator("alpha")
    @classmethod
    def _alpha_in_unit_interval(cls, v: float) -> float:
        if not 0 < v < 1:
            raise ValueError("alpha must lie strictly between 0 and 1")
        return v


@dataclass
class RelaxedSolution:
    """Solution of one relaxed self-consistency program.

    ``chi`` covers the program's active positions only.
    """
    chi: np.ndarray
    objective: float
    iterations: int
    feasible: bool


@dataclass
class Diagnostics:
    cs_set: List[int] = field(default_factory=list)
    tau_bh: int = 0
    diversity: Optional[float] = None
    cs_diversity: Optional[float] = None
    exchangeability_gap: Optional[float] = None
    similarity_ridge: float = 0.0
    wall_times: Dict[str, float] = field(default_factory=dict)
    tables: Optional[Dict[str, Any]] = None

    def to_dict(self) -> Dict[str, Any]:
        out = {
            "cs_set": [int(i) for i in self.cs_set],
            "tau_bh": int(self.tau_bh),
            "diversity": self.diversity,
            "cs_diversity": self.cs_diversity,
            "exchangeability_gap": self.exchangeability_gap,
            "similarity_ridge": self.similarity_ridge,
            "wall_times": dict(self.wall_times),
        }
        return out


@dataclass
class SelectionResult:
    """Selected test indices (0-based, into the test list) with the stopping time used."""
    selected: np.ndarray
    tau_star: int
    e_values: Optional[EValueVector]
    chi: Optional[RelaxedSolution] = None
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "selected": [int(i) for i in self.selected],
            "tau_star": int(self.tau_star),
            "e_values": None if self.e_values is None else [float(v) for v in self.e_values.values],
            "chi": None if self.chi is None else [float(v) for v in self.chi.chi],
            "diagnostics": self.diagnostics.to_dict(),
        }


def metric_name(metric: DiversityMetric) -> str:
    return type(metric).__name__.lower()
