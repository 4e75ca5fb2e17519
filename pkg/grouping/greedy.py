# grouping/greedy.py - Greedy average-linkage agglomeration of experts
import logging
from typing import Iterable, List

import numpy as np

from core.exceptions import ConfigurationError
from grouping.partition import Partition, check_feasible, partition_objective

logger = logging.getLogger(__name__)


def _scores(A) -> np.ndarray:
    return np.asarray(getattr(A, "scores", A), dtype=np.float64)


def partition_greedy(A, r: int, protected: Iterable[int] = ()) -> Partition:
    """
    Start from singletons and repeatedly merge the two clusters with the highest
    average cross similarity until r clusters remain.

    Protected experts are never merged. Ties go to the lexicographically smallest pair
    of (min index of first cluster, min index of second cluster).
    """
    scores = _scores(A)
    n = scores.shape[0]
    protected = set(int(i) for i in protected)
    check_feasible(n, r, protected)

    clusters: List[List[int]] = [[i] for i in range(n)]
    while len(clusters) > r:
        best = None
        best_value = -np.inf
        for a in range(len(clusters)):
            if clusters[a][0] in protected:
                continue
            for b in range(a + 1, len(clusters)):
                if clusters[b][0] in protected:
                    continue
                value = scores[np.ix_(clusters[a], clusters[b])].mean()
                if value > best_value:
                    best, best_value = (a, b), value
        if best is None:
            raise ConfigurationError(f"cannot reach r={r}: only protected singletons are left to merge")
        a, b = best
        clusters[a] = sorted(clusters[a] + clusters[b])
        del clusters[b]
        logger.debug(f"greedy merge -> {clusters[a]} (linkage {best_value:.6g})")

    p = Partition(tuple(tuple(c) for c in clusters))
    return p.with_objective(partition_objective(scores, p))
