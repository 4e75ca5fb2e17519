# grouping/random_partition.py - Seeded random grouping baseline
import logging
from typing import Iterable

import numpy as np

from grouping.partition import Partition, check_feasible, partition_objective

logger = logging.getLogger(__name__)


def partition_random(A, r: int, protected: Iterable[int] = (), seed: int = 0) -> Partition:
    """Merge uniformly chosen pairs of unprotected clusters until r groups remain"""
    scores = np.asarray(getattr(A, "scores", A), dtype=np.float64)
    n = scores.shape[0]
    protected = set(int(i) for i in protected)
    check_feasible(n, r, protected)

    rng = np.random.default_rng(seed)
    clusters = [[i] for i in range(n) if i not in protected]
    while len(clusters) + len(protected) > r:
        a, b = sorted(rng.choice(len(clusters), size=2, replace=False))
        clusters[a] = clusters[a] + clusters[b]
        del clusters[b]

    p = Partition(tuple(tuple(c) for c in clusters) + tuple((i,) for i in sorted(protected)))
    return p.with_objective(partition_objective(scores, p))
