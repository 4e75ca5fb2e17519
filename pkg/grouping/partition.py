# grouping/partition.py - Expert partitions and the graph-partition objective
import logging
from dataclasses import dataclass, field
from typing import Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ConfigurationError, DataError
from core.utils import load_json, save_json

logger = logging.getLogger(__name__)


def _canonical(groups: Iterable[Iterable[int]]) -> Tuple[Tuple[int, ...], ...]:
    canon = [tuple(sorted(int(i) for i in g)) for g in groups]
    if any(not g for g in canon):
        raise DataError("partition contains an empty group")
    return tuple(sorted(canon, key=lambda g: g[0]))


@dataclass(frozen=True)
class Partition:
    """
    Disjoint non-empty expert groups covering 0..N-1.

    Groups are kept sorted internally and ordered by their smallest index, which is also
    the order of the merged experts.
    """
    groups: Tuple[Tuple[int, ...], ...]
    objective_value: Optional[float] = field(default=None, compare=False)

    def __post_init__(self):
        groups = _canonical(self.groups)
        flat = [i for g in groups for i in g]
        if len(flat) != len(set(flat)):
            raise DataError(f"partition groups overlap: {[list(g) for g in groups]}")
        object.__setattr__(self, "groups", groups)

    @classmethod
    def singletons(cls, n: int) -> "Partition":
        return cls(tuple((i,) for i in range(n)))

    @classmethod
    def from_labels(cls, labels: Sequence[int], objective_value: Optional[float] = None) -> "Partition":
        buckets = {}
        for index, label in enumerate(labels):
            buckets.setdefault(int(label), []).append(index)
        return cls(tuple(tuple(g) for g in buckets.values()), objective_value)

    @property
    def n(self) -> int:
        return sum(len(g) for g in self.groups)

    @property
    def r(self) -> int:
        return len(self.groups)

    def labels(self) -> np.ndarray:
        """Group position of every expert"""
        labels = np.empty(self.n, dtype=int)
        for position, group in enumerate(self.groups):
            labels[list(group)] = position
        return labels

    def validate(self, n: int, protected: Iterable[int] = ()) -> None:
        flat = sorted(i for g in self.groups for i in g)
        if flat != list(range(n)):
            raise DataError(f"partition does not cover experts 0..{n - 1} exactly once")
        protected = set(int(i) for i in protected)
        for group in self.groups:
            if len(group) > 1 and protected.intersection(group):
                raise DataError(f"protected experts {sorted(protected.intersection(group))} must stay in singleton groups")

    def with_objective(self, value: float) -> "Partition":
        return Partition(self.groups, float(value))

    def to_lists(self) -> List[List[int]]:
        return [list(g) for g in self.groups]


def check_feasible(n: int, r: int, protected: Iterable[int] = ()) -> None:
    """r groups are reachable iff every protected expert gets its own group and the rest fit in the remainder"""
    protected = set(protected)
    if not 1 <= r <= n:
        raise ConfigurationError(f"r={r} must lie in [1, {n}]")
    if any(i < 0 or i >= n for i in protected):
        raise ConfigurationError(f"protected experts {sorted(protected)} out of range for {n} experts")
    free = n - len(protected)
    if r < len(protected) + (1 if free > 0 else 0):
        raise ConfigurationError(
            f"r={r} leaves no room: {len(protected)} protected singletons plus {free} other experts need at least "
            f"{len(protected) + (1 if free > 0 else 0)} groups"
        )


def partition_objective(A, p: Partition) -> float:
    """
    Intra-group similarity minus cross-group similarity.

    Intra pairs count once. Every unordered cross pair counts twice, once from each
    side's group.
    """
    scores = getattr(A, "scores", A)
    scores = np.asarray(scores, dtype=np.float64)
    p.validate(scores.shape[0])
    labels = p.labels()
    same = labels[:, None] == labels[None, :]
    upper = np.triu(np.ones_like(same), k=1)
    intra = scores[same & upper].sum()
    cross = scores[~same].sum()
    return float(intra - cross)


def save_partitions(partitions: Sequence[Partition], path, **fields) -> None:
    """groups.json: per-layer arrays of index arrays plus optional run fields"""
    payload = dict(fields)
    payload["layers"] = [p.to_lists() for p in partitions]
    payload["objectives"] = [p.objective_value for p in partitions]
    save_json(payload, path)


def load_partitions(path) -> List[Partition]:
    payload = load_json(path)
    layers = payload.get("layers") if isinstance(payload, dict) else payload
    if not isinstance(layers, list):
        raise DataError(f"{path} has no per-layer group list")
    try:
        return [Partition(tuple(tuple(g) for g in groups)) for groups in layers]
    except TypeError as e:
        raise DataError(f"{path} holds malformed groups: {e}")
