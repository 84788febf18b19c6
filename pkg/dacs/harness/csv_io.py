"""CSV ingestion and export for samples and similarity matrices.

Calibration files carry ``z`` (or numeric ``z1..zd``), ``mu_hat`` and ``y``; test files omit
``y``. An optional ``c`` column holds per-candidate thresholds and is subtracted from both the
response and the prediction, so the selection target becomes y > c.
"""
import logging
import re
from typing import List, Sequence, Union

import numpy as np
import pandas as pd
from pydantic import ValidationError

from dacs.engine.diversity import SimilarityMatrix
from dacs.errors import DataError
from dacs.models.samples import CalibrationSample, TestSample

logger = logging.getLogger(__name__)

_VECTOR_COLUMN = re.compile(r"^z(\d+)$")


def _read(path: str) -> pd.DataFrame:
    try:
        return pd.read_csv(path, float_precision="round_trip")
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        logger.error(f"Error reading {path}: {e}")
        raise DataError(f"cannot read {path}: {e}") from e


def _diversifiers(frame: pd.DataFrame, path: str) -> list:
    if "z" in frame.columns:
        column = frame["z"]
        if pd.api.types.is_integer_dtype(column):
            return [int(v) for v in column]
        return [str(v) for v in column]
    vector_cols = sorted(
        (c for c in frame.columns if _VECTOR_COLUMN.match(str(c))),
        key=lambda c: int(_VECTOR_COLUMN.match(str(c)).group(1)),
    )
    if not vector_cols:
        raise DataError(f"{path} needs a z column or z1..zd columns")
    values = frame[vector_cols].to_numpy(dtype=float)
    return [row.tolist() for row in values]


def _require(frame: pd.DataFrame, columns: Sequence[str], path: str) -> None:
    missing = [c for c in columns if c not in frame.columns]
    if missing:
        raise DataError(f"{path} is missing column(s) {', '.join(missing)}")


def read_calibration_csv(path: str) -> List[CalibrationSample]:
    frame = _read(path)
    _require(frame, ["mu_hat", "y"], path)
    z = _diversifiers(frame, path)
    mu_hat = frame["mu_hat"].to_numpy(dtype=float)
    y = frame["y"].to_numpy(dtype=float)
    if "c" in frame.columns:
        c = frame["c"].to_numpy(dtype=float)
        y, mu_hat = y - c, mu_hat - c
    try:
        samples = [CalibrationSample(z=zi, mu_hat=float(m), y=float(v)) for zi, m, v in zip(z, mu_hat, y)]
    except ValidationError as e:
        raise DataError(f"invalid calibration row in {path}: {e}") from e
    logger.info(f"Read {len(samples)} calibration samples from {path}")
    return samples


def read_test_csv(path: str) -> List[TestSample]:
    frame = _read(path)
    _require(frame, ["mu_hat"], path)
    z = _diversifiers(frame, path)
    mu_hat = frame["mu_hat"].to_numpy(dtype=float)
    if "c" in frame.columns:
        mu_hat = mu_hat - frame["c"].to_numpy(dtype=float)
    try:
        samples = [TestSample(z=zi, mu_hat=float(m)) for zi, m in zip(z, mu_hat)]
    except ValidationError as e:
        raise DataError(f"invalid test row in {path}: {e}") from e
    logger.info(f"Read {len(samples)} test samples from {path}")
    return samples


def samples_frame(samples: Sequence[Union[CalibrationSample, TestSample]]) -> pd.DataFrame:
    if not samples:
        return pd.DataFrame()
    first = samples[0].z
    if isinstance(first, list):
        frame = pd.DataFrame(
            np.asarray([s.z for s in samples], dtype=float),
            columns=[f"z{j + 1}" for j in range(len(first))],
        )
    else:
        frame = pd.DataFrame({"z": [s.z for s in samples]})
    frame["mu_hat"] = [s.mu_hat for s in samples]
    if isinstance(samples[0], CalibrationSample):
        frame["y"] = [s.y for s in samples]
    return frame


def write_samples_csv(samples: Sequence[Union[CalibrationSample, TestSample]], path: str) -> None:
    try:
        samples_frame(samples).to_csv(path, index=False)
    except OSError as e:
        logger.error(f"Error writing {path}: {e}")
        raise


def read_similarity_csv(path: str) -> SimilarityMatrix:
    """Dense square matrix in pooled order (calibration rows first); a header row is optional."""
    try:
        frame = pd.read_csv(path, header=None, float_precision="round_trip")
        try:
            entries = frame.to_numpy(dtype=float)
        except ValueError:
            entries = pd.read_csv(path, float_precision="round_trip").to_numpy(dtype=float)
    except (OSError, ValueError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        logger.error(f"Error reading similarity matrix {path}: {e}")
        raise DataError(f"cannot read similarity matrix {path}: {e}") from e
    return SimilarityMatrix.regularized(entries)
