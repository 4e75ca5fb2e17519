# similarity/matrix.py - Pairwise expert similarity matrices and their CSV form
import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np
from scipy.spatial.distance import cdist

import config
from core.exceptions import DataError, DimensionError, UndefinedSimilarityError
from core.moe import MoELayer
from core.utils import read_matrix_csv, write_matrix_csv
from modelio.calibration import CalibrationBatch
from similarity.kernels import CenteredGram, Kernel
from similarity.representations import ExpertRepresentation, RepresentationKind, represent_layer

logger = logging.getLogger(__name__)

_SYMMETRY_ATOL = 1e-9


class Metric(str, Enum):
    CKA_LINEAR = "cka-linear"
    CKA_RBF = "cka-rbf"
    COSINE = "cosine"
    NEG_MSE = "neg-mse"

    @property
    def maximum(self) -> float:
        return 0.0 if self is Metric.NEG_MSE else 1.0

    @property
    def kernel(self) -> Optional[Kernel]:
        return {Metric.CKA_LINEAR: Kernel.LINEAR, Metric.CKA_RBF: Kernel.RBF}.get(self)


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    """N x N symmetric expert similarity scores for one layer"""
    scores: np.ndarray
    metric: Metric
    kind: Optional[RepresentationKind] = None

    def __post_init__(self):
        scores = np.asarray(self.scores, dtype=np.float64)
        if scores.ndim != 2 or scores.shape[0] != scores.shape[1] or scores.shape[0] < 1:
            raise DimensionError("similarity matrix must be square", ("N", "N"), scores.shape)
        if not np.all(np.isfinite(scores)):
            raise DataError("similarity matrix contains non-finite entries")
        if not np.allclose(scores, scores.T, rtol=0.0, atol=_SYMMETRY_ATOL):
            raise DataError("similarity matrix is not symmetric")
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "metric", Metric(self.metric))
        if self.kind is not None:
            object.__setattr__(self, "kind", RepresentationKind(self.kind))

    @property
    def n(self) -> int:
        return self.scores.shape[0]

    def submatrix(self, indices: Sequence[int]) -> "SimilarityMatrix":
        idx = np.asarray(list(indices), dtype=int)
        return SimilarityMatrix(self.scores[np.ix_(idx, idx)], self.metric, self.kind)


def _check_reps(reps: Sequence[ExpertRepresentation]) -> None:
    if not reps:
        raise DataError("no representations to compare")
    first = reps[0]
    for index, rep in enumerate(reps):
        if rep.kind is not first.kind:
            raise DataError(f"representation {index} is '{rep.kind.value}', expected '{first.kind.value}'")
        if rep.shape != first.shape:
            raise DimensionError(f"representation {index}", first.shape, rep.shape)


def _cka_scores(reps: Sequence[ExpertRepresentation], kernel: Kernel, bandwidth: float) -> np.ndarray:
    n = len(reps)
    grams = [CenteredGram(r.data, kernel, bandwidth) for r in reps]
    for index, g in enumerate(grams):
        if g.degenerate:
            logger.warning(f"Expert {index} has a zero-variance representation; its similarities are set to 0")

    scores = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            try:
                scores[i, j] = scores[j, i] = grams[i].alignment(grams[j])
            except UndefinedSimilarityError:
                scores[i, j] = scores[j, i] = 0.0
    return scores


def _cosine_scores(V: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(V, axis=1)
    zero = norms == 0
    for index in np.nonzero(zero)[0]:
        logger.warning(f"Expert {index} has an all-zero representation; its cosine similarities are set to 0")
    unit = V / np.where(zero, 1.0, norms)[:, None]
    scores = np.clip(unit @ unit.T, -1.0, 1.0)
    scores[zero, :] = 0.0
    scores[:, zero] = 0.0
    return (scores + scores.T) / 2.0


def similarity_matrix(
    reps: Sequence[ExpertRepresentation],
    metric: Metric,
    bandwidth: Optional[float] = None,
) -> SimilarityMatrix:
    """
    Pairwise similarity of one layer's expert representations.

    CKA metrics compare kernel matrices; cosine and negative MSE compare flattened
    representations. The diagonal is the metric's maximum.
    """
    metric = Metric(metric)
    _check_reps(reps)
    bandwidth = config.RBF_BANDWIDTH if bandwidth is None else bandwidth

    if metric.kernel is not None:
        scores = _cka_scores(reps, metric.kernel, bandwidth)
    else:
        V = np.stack([r.data.ravel() for r in reps])
        if metric is Metric.COSINE:
            scores = _cosine_scores(V)
        else:
            scores = -cdist(V, V, "sqeuclidean") / V.shape[1]

    np.fill_diagonal(scores, metric.maximum)
    return SimilarityMatrix(scores, metric, reps[0].kind)


def build_layer_similarity(
    layer: MoELayer,
    kind: RepresentationKind,
    metric: Metric,
    batch: Optional[CalibrationBatch] = None,
    augment: bool = False,
    seed: int = 0,
    bandwidth: Optional[float] = None,
) -> SimilarityMatrix:
    reps = represent_layer(layer, kind, batch=batch, augment=augment, seed=seed)
    return similarity_matrix(reps, metric, bandwidth=bandwidth)


def write_similarity_csv(sim: SimilarityMatrix, path: Union[str, Path], digits: Optional[int] = None) -> None:
    write_matrix_csv(sim.scores, path, config.CSV_DIGITS if digits is None else digits)


def read_similarity_csv(path: Union[str, Path], metric: Optional[Metric] = None) -> SimilarityMatrix:
    """
    Load a matrix written by write_similarity_csv.

    Without an explicit metric, a zero diagonal over non-positive entries is read as
    negative MSE and anything else as a CKA-style score.
    """
    scores = read_matrix_csv(path)
    if metric is None:
        looks_like_mse = np.all(np.diag(scores) == 0.0) and np.all(scores <= 0.0)
        metric = Metric.NEG_MSE if looks_like_mse else Metric.CKA_LINEAR
    return SimilarityMatrix(scores, metric)
