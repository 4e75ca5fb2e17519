# modelio/calibration.py - Calibration corpus ingestion and seeded row sampling
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Tuple, Union

import numpy as np

from core.exceptions import ConfigurationError, DataError, DegenerateInputError, DimensionError, ParseError
from modelio.container import read_container, write_container

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

EMBEDDINGS = "embeddings"


@dataclass(frozen=True, eq=False)
class CalibrationBatch:
    """s x d_model token embeddings shared by every expert of a layer"""
    embeddings: np.ndarray
    source_id: str = "memory"

    def __post_init__(self):
        X = np.asarray(self.embeddings, dtype=np.float64)
        if X.ndim != 2:
            raise DimensionError("calibration batch must be a matrix", ("s", "d_model"), X.shape)
        if X.shape[0] < 2:
            raise DegenerateInputError(f"calibration batch '{self.source_id}' has {X.shape[0]} rows, need at least 2")
        if not np.all(np.isfinite(X)):
            raise DataError(f"calibration batch '{self.source_id}' contains non-finite entries")
        object.__setattr__(self, "embeddings", X)

    @property
    def s(self) -> int:
        return self.embeddings.shape[0]

    @property
    def d_model(self) -> int:
        return self.embeddings.shape[1]


def random_embeddings(rows: int, d_model: int, seed: int) -> np.ndarray:
    """Seeded standard-normal token embeddings stored as float32"""
    if rows < 1 or d_model < 1:
        raise ConfigurationError(f"cannot generate {rows} x {d_model} embeddings")
    rng = np.random.default_rng(seed)
    return rng.standard_normal((rows, d_model)).astype(np.float32)


def save_calibration(embeddings: np.ndarray, path: PathLike, source_id: Optional[str] = None) -> None:
    embeddings = np.asarray(embeddings)
    if embeddings.ndim != 2:
        raise DimensionError("calibration embeddings must be a matrix", ("rows", "d_model"), embeddings.shape)
    fields = {"kind": "calibration", "source_id": source_id or Path(path).stem}
    write_container(path, {EMBEDDINGS: embeddings}, fields)
    logger.info(f"Wrote {embeddings.shape[0]} x {embeddings.shape[1]} calibration embeddings to {path}")


def read_embeddings(path: PathLike) -> Tuple[np.ndarray, str]:
    """Full embedding matrix of a calibration file plus its source id"""
    header, tensors = read_container(path)
    if EMBEDDINGS not in tensors:
        raise ParseError("calibration file has no embedding matrix", tensor=EMBEDDINGS)
    embeddings = tensors[EMBEDDINGS]
    if embeddings.ndim != 2:
        raise ParseError(f"expected a matrix, got shape {embeddings.shape}", tensor=EMBEDDINGS)
    return embeddings, str(header.get("source_id") or Path(path).stem)


def _sample_rows(n_rows: int, wanted: int, seed: int) -> np.ndarray:
    if wanted > n_rows:
        raise ConfigurationError(f"requested {wanted} calibration rows but only {n_rows} are available")
    rng = np.random.default_rng(seed)
    return rng.choice(n_rows, size=wanted, replace=False)


def sample_batches(
    embeddings: np.ndarray,
    s_per_batch: int,
    n_batches: int,
    seed: int,
    source_id: str = "memory",
) -> List[CalibrationBatch]:
    """Seeded sampling without replacement of rows into n_batches batches of s_per_batch rows"""
    if s_per_batch < 1 or n_batches < 1:
        raise ConfigurationError(f"need positive batch size and count, got {s_per_batch} x {n_batches}")
    rows = _sample_rows(embeddings.shape[0], s_per_batch * n_batches, seed)
    return [
        CalibrationBatch(embeddings[rows[b * s_per_batch:(b + 1) * s_per_batch]], f"{source_id}#{b}")
        for b in range(n_batches)
    ]


def load_calibration(path: PathLike, s_per_batch: int, n_batches: int, seed: int) -> List[CalibrationBatch]:
    embeddings, source_id = read_embeddings(path)
    return sample_batches(embeddings, s_per_batch, n_batches, seed, source_id)


def fit_eval_split(
    embeddings: np.ndarray,
    samples: int,
    eval_samples: int,
    seed: int,
    source_id: str = "memory",
) -> Tuple[CalibrationBatch, CalibrationBatch]:
    """
    One seeded draw of samples + eval_samples distinct rows.

    The first `samples` rows are used for discovery and learning, the rest are held out
    for evaluation, so the two never share a token.
    """
    rows = _sample_rows(embeddings.shape[0], samples + eval_samples, seed)
    fit = CalibrationBatch(embeddings[rows[:samples]], f"{source_id}#fit")
    held_out = CalibrationBatch(embeddings[rows[samples:]], f"{source_id}#eval")
    return fit, held_out
