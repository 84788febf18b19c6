import math
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional, Union

from pydantic import BaseModel, field_validator

# Categorical label or real feature vector used for diversification
Diversifier = Union[int, str, List[float]]


class CalibrationSample(BaseModel):
    """Labelled calibration point: diversification value, prediction and observed response."""
    z: Diversifier
    mu_hat: float
    y: float

    @field_validator("mu_hat")
    @classmethod
    def _finite_prediction(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("mu_hat must be finite")
        return v

    class Config:
        frozen = True


class TestSample(BaseModel):
    """Unlabelled test point."""
    z: Diversifier
    mu_hat: float

    @field_validator("mu_hat")
    @classmethod
    def _finite_prediction(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError("mu_hat must be finite")
        return v

    class Config:
        frozen = True


class OriginKind(str, Enum):
    CALIBRATION = "calibration"
    TEST = "test"


@dataclass(frozen=True)
class Score:
    """Clipped conformity score tagged with where it came from.

    ``value`` is an IEEE double; ``math.inf`` is the only infinite value allowed and only
    calibration points with a positive response carry it.
    """
    value: float
    kind: OriginKind
    index: int

    def __post_init__(self):
        if math.isnan(self.value) or self.value == -math.inf:
            raise ValueError("score must be finite or +inf")
        if self.kind is OriginKind.TEST and math.isinf(self.value):
            raise ValueError("test scores are always finite")

    @property
    def is_infinite(self) -> bool:
        return math.isinf(self.value)


def clipped_score(y: Optional[float], mu_hat: float) -> float:
    """Clipped score: +inf when the response is positive, otherwise -mu_hat.

    A missing response is imputed as 0, which gives the test score -mu_hat.
    """
    if y is not None and y > 0:
        return math.inf
    return -mu_hat
