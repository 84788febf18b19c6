"""Random sample builders shared by the test modules."""
import numpy as np

from dacs.models.samples import CalibrationSample, TestSample


def make_categorical_samples(rng, n, m, n_categories=2, shift=0.0):
    calib = [
        CalibrationSample(z=int(rng.integers(1, n_categories + 1)), mu_hat=float(rng.normal()), y=float(rng.normal() + shift))
        for _ in range(n)
    ]
    test = [TestSample(z=int(rng.integers(1, n_categories + 1)), mu_hat=float(rng.normal())) for _ in range(m)]
    return calib, test


def make_vector_samples(rng, n, m, d=2):
    x = rng.normal(size=(n + m, d))
    mu = x[:, 0]
    y = mu + rng.normal(size=n + m)
    calib = [CalibrationSample(z=x[i].tolist(), mu_hat=float(mu[i]), y=float(y[i])) for i in range(n)]
    test = [TestSample(z=x[n + i].tolist(), mu_hat=float(mu[n + i])) for i in range(m)]
    return calib, test
