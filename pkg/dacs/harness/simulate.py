"""Synthetic data generators for the simulation studies.

Underrepresentation settings draw a category Z, a hidden sub-cluster given Z and a scalar
X ~ N(mean of the sub-cluster, 1), with Y = f(X) + N(0, 1). Similarity settings diversify on
the covariate vector itself.
"""
import logging
from dataclasses import dataclass
from typing import Callable, Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field, model_validator
from sklearn.linear_model import LinearRegression
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import PolynomialFeatures

from dacs.errors import UnknownSetting
from dacs.models.samples import CalibrationSample, TestSample

logger = logging.getLogger(__name__)

PROB_TOL = 1e-9

RESPONSES: Dict[str, Callable[[np.ndarray], np.ndarray]] = {
    "identity": lambda x: x[:, 0],
    "square": lambda x: x[:, 0] ** 2 - 1,
    "cosine": lambda x: 2 * np.cos(x[:, 0]),
    "step": lambda x: 3.0 * (x[:, 0] > 0) - 1.5,
    "cubic": lambda x: x[:, 0] ** 3 + x[:, 0],
    "product": lambda x: x[:, 0] * x[:, 1] + x[:, 2],
    "norm": lambda x: np.sum(x ** 2, axis=1) - 3.5,
    "negnorm": lambda x: 3.5 - np.sum(x ** 2, axis=1),
}

MIXTURE_3D_MEANS = np.array([
    [1.0, -1.0, 1.0],
    [0.75, 4.0, 2.0],
    [-2.0, -1.5, 1.0],
    [1.5, 2.0, 1.5],
    [-5.0, 3.0, 2.0],
])


class SimSetting(BaseModel):
    """A data-generating process plus sample sizes."""
    name: str
    family: Literal["underrep", "similarity"]
    response: str
    covariates: Literal["hierarchical", "mixture3d", "gauss5"] = "hierarchical"
    pi: List[float] = Field(default_factory=list)
    pi_sub: List[List[float]] = Field(default_factory=list)
    means: List[float] = Field(default_factory=list)
    n_calib: int = Field(default=60, ge=1)
    n_test: int = Field(default=40, ge=1)
    n_train: int = Field(default=500, ge=2)
    noise_sd: float = Field(default=1.0, ge=0)
    poly_degree: int = Field(default=2, ge=1, le=3)

    @model_validator(mode="after")
    def _check_probabilities(self):
        if self.response not in RESPONSES:
            raise ValueError(f"unknown response function {self.response}")
        if self.covariates == "hierarchical":
            if abs(sum(self.pi) - 1) > PROB_TOL:
                raise ValueError("category probabilities must sum to 1")
            if len(self.pi_sub) != len(self.pi):
                raise ValueError("need one sub-cluster distribution per category")
            for row in self.pi_sub:
                if len(row) != len(self.means) or abs(sum(row) - 1) > PROB_TOL:
                    raise ValueError("sub-cluster probabilities must sum to 1 over the sub-cluster means")
        return self

    @property
    def n_categories(self) -> int:
        return len(self.pi)


def _underrep(name, pi, pi_sub, means, response) -> SimSetting:
    return SimSetting(name=name, family="underrep", response=response, pi=pi, pi_sub=pi_sub, means=means)


SETTINGS: Dict[str, SimSetting] = {
    "u1": _underrep("u1", [1 / 3, 1 / 3, 1 / 3],
                    [[0.8, 0.05, 0.15], [0.2, 0.6, 0.2], [0.2, 0.2, 0.6]], [-0.5, 1.5, 2.0], "identity"),
    "u2": _underrep("u2", [0.5, 0.5], [[0.8, 0.05, 0.15], [0.15, 0.75, 0.1]], [0.0, -2.0, 1.5], "square"),
    "u3": _underrep("u3", [0.5, 0.5], [[0.05, 0.85, 0.1], [0.4, 0.2, 0.4]], [0.0, -np.pi, 0.7], "cosine"),
    "u4": _underrep("u4", [0.25, 0.25, 0.25, 0.25],
                    [[0.2, 0.0, 0.0, 0.0, 0.8], [0.0, 0.22, 0.35, 0.43, 0.0],
                     [0.15, 0.35, 0.15, 0.1, 0.25], [0.2, 0.05, 0.05, 0.05, 0.65]],
                    [-2.0, -1.0, 0.0, 1.5, 3.0], "step"),
    "u5": _underrep("u5", [0.7, 0.3], [[0.8, 0.05, 0.15], [0.15, 0.75, 0.1]], [0.0, -2.0, 1.5], "square"),
    "u6": _underrep("u6", [1 / 3, 1 / 3, 1 / 3],
                    [[1.0, 0.0, 0.0], [0.2, 0.2, 0.6], [0.2, 0.6, 0.2]], [-0.75, 0.5, 1.2], "cubic"),
    "sm1": SimSetting(name="sm1", family="similarity", response="product", covariates="mixture3d"),
    "sm2": SimSetting(name="sm2", family="similarity", response="norm", covariates="gauss5"),
    "sm3": SimSetting(name="sm3", family="similarity", response="cosine", covariates="gauss5"),
    "sm4": SimSetting(name="sm4", family="similarity", response="negnorm", covariates="gauss5"),
}


def get_setting(name: str, **overrides) -> SimSetting:
    if name not in SETTINGS:
        raise UnknownSetting(f"unknown setting {name!r}; choose from {', '.join(SETTINGS)}")
    setting = SETTINGS[name]
    return setting.model_copy(update=overrides) if overrides else setting


@dataclass
class SimData:
    calib: List[CalibrationSample]
    test: List[TestSample]
    truth: np.ndarray
    train: Optional[Tuple[np.ndarray, np.ndarray]] = None


def draw_covariates(setting: SimSetting, rng: np.random.Generator, size: int) -> Tuple[np.ndarray, np.ndarray]:
    """Return (z, X). For similarity settings z is X itself."""
    if setting.covariates == "hierarchical":
        z = rng.choice(setting.n_categories, size=size, p=setting.pi)
        pi_sub = np.asarray(setting.pi_sub)
        means = np.asarray(setting.means)
        sub = np.array([rng.choice(means.size, p=pi_sub[c]) for c in z], dtype=int)
        X = (means[sub] + rng.standard_normal(size))[:, None]
        return z + 1, X
    if setting.covariates == "mixture3d":
        component = rng.integers(0, MIXTURE_3D_MEANS.shape[0], size=size)
        X = MIXTURE_3D_MEANS[component] + 0.5 * rng.standard_normal((size, 3))
        return X, X
    X = rng.standard_normal((size, 5))
    return X, X


class LeastSquaresPredictor:
    """Polynomial-feature ordinary least squares, the built-in mu_hat."""

    def __init__(self, degree: int = 2):
        self.model = make_pipeline(PolynomialFeatures(degree), LinearRegression())

    def fit(self, X: np.ndarray, y: np.ndarray) -> "LeastSquaresPredictor":
        self.model.fit(X, y)
        return self

    def predict(self, X: np.ndarray) -> np.ndarray:
        return self.model.predict(X)


def simulate(setting: SimSetting, replicate_seed: int, keep_train: bool = False) -> SimData:
    rng = np.random.default_rng(replicate_seed)
    total = setting.n_train + setting.n_calib + setting.n_test
    z, X = draw_covariates(setting, rng, total)
    y = RESPONSES[setting.response](X) + setting.noise_sd * rng.standard_normal(total)

    train = slice(0, setting.n_train)
    cal = slice(setting.n_train, setting.n_train + setting.n_calib)
    tst = slice(setting.n_train + setting.n_calib, total)
    predictor = LeastSquaresPredictor(setting.poly_degree).fit(X[train], y[train])
    mu_cal, mu_test = predictor.predict(X[cal]), predictor.predict(X[tst])

    def as_z(value):
        return int(value) if np.ndim(value) == 0 else [float(v) for v in value]

    calib = [CalibrationSample(z=as_z(zi), mu_hat=float(m), y=float(v)) for zi, m, v in zip(z[cal], mu_cal, y[cal])]
    test = [TestSample(z=as_z(zi), mu_hat=float(m)) for zi, m in zip(z[tst], mu_test)]
    logger.debug(f"Simulated {setting.name} replicate seed={replicate_seed}: {int(np.sum(y[tst] > 0))} positives")
    return SimData(calib=calib, test=test, truth=y[tst].copy(), train=(X[train], y[train]) if keep_train else None)
