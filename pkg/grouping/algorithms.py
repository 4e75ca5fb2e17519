# grouping/algorithms.py - Partition algorithm selection
from enum import Enum
from typing import Iterable

from grouping.bruteforce import partition_bruteforce
from grouping.greedy import partition_greedy
from grouping.partition import Partition
from grouping.random_partition import partition_random
from grouping.spectral import partition_spectral


class PartitionAlgorithm(str, Enum):
    GREEDY = "greedy"
    SPECTRAL = "spectral"
    BRUTE = "brute"
    RANDOM = "random"


def partition_layer(A, r: int, algorithm: PartitionAlgorithm, protected: Iterable[int] = (), seed: int = 0) -> Partition:
    algorithm = PartitionAlgorithm(algorithm)
    if algorithm is PartitionAlgorithm.GREEDY:
        return partition_greedy(A, r, protected)
    if algorithm is PartitionAlgorithm.SPECTRAL:
        return partition_spectral(A, r, protected, seed=seed)
    if algorithm is PartitionAlgorithm.BRUTE:
        return partition_bruteforce(A, r, protected)
    return partition_random(A, r, protected, seed=seed)
