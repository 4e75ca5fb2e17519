# grouping/spectral.py - Normalized-Laplacian spectral clustering of the expert graph
import logging
from typing import Iterable, List, Optional

import numpy as np
from scipy.linalg import eigh
from sklearn.cluster import KMeans

import config
from core.exceptions import ConfigurationError
from grouping.partition import Partition, check_feasible, partition_objective
from similarity.matrix import Metric

logger = logging.getLogger(__name__)

_ISOLATED_TOL = 1e-12


def affinity(scores: np.ndarray, metric: Optional[Metric] = None) -> np.ndarray:
    """Nonnegative affinity with a zero diagonal: negative MSE is shifted by its minimum, other metrics are clipped at 0"""
    scores = np.asarray(scores, dtype=np.float64)
    if metric is not None and Metric(metric) is Metric.NEG_MSE:
        W = scores - scores.min()
    else:
        W = np.clip(scores, 0.0, None)
    W = (W + W.T) / 2.0
    np.fill_diagonal(W, 0.0)
    return W


def _split_until(labels: np.ndarray, k: int) -> np.ndarray:
    """Peel the highest index off the largest cluster until k clusters exist"""
    labels = labels.copy()
    while len(np.unique(labels)) < k:
        values, counts = np.unique(labels, return_counts=True)
        largest = values[np.argmax(counts)]
        members = np.nonzero(labels == largest)[0]
        labels[members.max()] = labels.max() + 1
    return labels


def _embed_and_cluster(W: np.ndarray, k: int, seed: int) -> np.ndarray:
    degrees = W.sum(axis=1)
    inv_sqrt = 1.0 / np.sqrt(degrees)
    laplacian = np.eye(W.shape[0]) - inv_sqrt[:, None] * W * inv_sqrt[None, :]
    _, vectors = eigh((laplacian + laplacian.T) / 2.0)
    U = vectors[:, :k]
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    U = U / np.where(norms > 0, norms, 1.0)

    kmeans = KMeans(
        n_clusters=k,
        n_init=config.KMEANS_RESTARTS,
        max_iter=config.KMEANS_MAX_ITER,
        random_state=seed,
    )
    labels = kmeans.fit_predict(U)
    if len(np.unique(labels)) < k:
        logger.warning(f"k-means returned {len(np.unique(labels))} clusters for k={k}; splitting the largest")
        labels = _split_until(labels, k)
    return labels


def partition_spectral(
    A,
    r: int,
    protected: Iterable[int] = (),
    seed: int = 0,
    metric: Optional[Metric] = None,
) -> Partition:
    """
    Spectral clustering into r groups.

    Protected experts are set aside as singletons. Vertices with zero degree in the
    affinity graph become their own groups before the eigendecomposition; the rest
    are embedded with the leading eigenvectors of I - D^-1/2 W D^-1/2, row-normalized
    and clustered with seeded k-means.
    """
    scores = np.asarray(getattr(A, "scores", A), dtype=np.float64)
    if metric is None:
        metric = getattr(A, "metric", None)
    n = scores.shape[0]
    protected = sorted(set(int(i) for i in protected))
    check_feasible(n, r, protected)

    groups: List[tuple] = [(i,) for i in protected]
    free = [i for i in range(n) if i not in protected]
    k = r - len(protected)
    if free:
        W = affinity(scores[np.ix_(free, free)], metric)
        isolated = W.sum(axis=1) <= _ISOLATED_TOL
        connected = [free[i] for i in np.nonzero(~isolated)[0]]
        groups.extend((free[i],) for i in np.nonzero(isolated)[0])
        k -= int(isolated.sum())
        if k < 0 or (k == 0 and connected):
            raise ConfigurationError(
                f"{int(isolated.sum())} isolated experts need their own groups, which exceeds r={r}"
            )
        if connected:
            if k == 1:
                labels = np.zeros(len(connected), dtype=int)
            elif k >= len(connected):
                labels = np.arange(len(connected))
            else:
                sub = W[np.ix_(~isolated, ~isolated)]
                labels = _embed_and_cluster(sub, k, seed)
            for label in np.unique(labels):
                groups.append(tuple(connected[i] for i in np.nonzero(labels == label)[0]))

    p = Partition(tuple(groups))
    return p.with_objective(partition_objective(scores, p))
