# grouping/bruteforce.py - Exhaustive search over partitions into exactly r groups
import logging
from typing import Iterable, Iterator, List

import numpy as np

import config
from core.exceptions import ConfigurationError
from grouping.partition import Partition, check_feasible, partition_objective

logger = logging.getLogger(__name__)


def restricted_growth_strings(n: int, k: int) -> Iterator[List[int]]:
    """
    Every set partition of n items into exactly k blocks, as a label list where item i
    takes a label at most one above the largest label used before it.
    """
    labels = [0] * n

    def extend(position: int, used: int) -> Iterator[List[int]]:
        if position == n:
            if used == k:
                yield list(labels)
            return
        # not enough items left to open the missing blocks
        if k - used > n - position:
            return
        for label in range(min(used + 1, k)):
            labels[position] = label
            yield from extend(position + 1, max(used, label + 1))

    if n == 0:
        return
    labels[0] = 0
    yield from extend(1, 1)


def partition_bruteforce(A, r: int, protected: Iterable[int] = ()) -> Partition:
    """
    Maximize the partition objective over all partitions into r groups.

    Protected experts stay singletons and the remaining experts are split into the
    remaining groups. Equal objectives resolve to the lexicographically smallest
    group encoding.
    """
    scores = np.asarray(getattr(A, "scores", A), dtype=np.float64)
    n = scores.shape[0]
    protected = sorted(set(int(i) for i in protected))
    check_feasible(n, r, protected)
    if n > config.BRUTE_FORCE_MAX_N:
        raise ConfigurationError(
            f"brute force is limited to N <= {config.BRUTE_FORCE_MAX_N} experts (got {n}); use greedy or spectral"
        )

    free = [i for i in range(n) if i not in protected]
    fixed = tuple((i,) for i in protected)
    k = r - len(protected)

    # objective = 3 * intra - 2 * total over the upper triangle, so only intra varies
    sub = scores[np.ix_(free, free)]
    upper = np.triu(np.ones(sub.shape, dtype=bool), k=1)

    best = None
    best_intra = -np.inf
    for labels in restricted_growth_strings(len(free), k):
        lab = np.asarray(labels)
        intra = sub[(lab[:, None] == lab[None, :]) & upper].sum()
        if intra < best_intra:
            continue
        candidate = Partition(fixed + tuple(
            tuple(free[i] for i in range(len(free)) if labels[i] == g) for g in range(k)
        ))
        if intra > best_intra or candidate.groups < best.groups:
            best, best_intra = candidate, intra

    if best is None:
        # every expert is protected
        best = Partition(fixed)
    return best.with_objective(partition_objective(scores, best))
