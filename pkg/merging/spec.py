# merging/spec.py - Per-group merge coefficients
import logging
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Tuple

import numpy as np

from core.exceptions import ConfigurationError, DataError
from grouping.partition import Partition

logger = logging.getLogger(__name__)

_SIMPLEX_ATOL = 1e-9


class MergeStrategy(str, Enum):
    UNIFORM = "uniform"
    MAX = "max"
    LEARN = "learn"
    FREQUENCY = "frequency"

    @property
    def needs_calibration(self) -> bool:
        return self is not MergeStrategy.UNIFORM


@dataclass(frozen=True, eq=False)
class MergeSpec:
    """
    Simplex coefficients alpha per group plus a scale lambda per group.

    lambda multiplies the merged expert weights only (never the router row) and is
    applied only for learned specs. eval_loss and uniform_eval_loss are diagnostics
    filled in by learning.
    """
    strategy: MergeStrategy
    alphas: Tuple[np.ndarray, ...]
    lambdas: Optional[Tuple[float, ...]] = None
    eval_loss: Optional[float] = None
    uniform_eval_loss: Optional[float] = None

    def __post_init__(self):
        object.__setattr__(self, "strategy", MergeStrategy(self.strategy))
        alphas = tuple(np.asarray(a, dtype=np.float64).ravel() for a in self.alphas)
        for position, alpha in enumerate(alphas):
            if alpha.size == 0 or not np.all(np.isfinite(alpha)) or np.any(alpha < 0):
                raise DataError(f"group {position}: alphas must be finite, nonnegative and non-empty")
            if abs(alpha.sum() - 1.0) > _SIMPLEX_ATOL:
                raise DataError(f"group {position}: alphas sum to {alpha.sum():.12g}, expected 1")
        object.__setattr__(self, "alphas", alphas)

        lambdas = self.lambdas
        if lambdas is None:
            lambdas = tuple(1.0 for _ in alphas)
        lambdas = tuple(float(v) for v in lambdas)
        if len(lambdas) != len(alphas) or not all(np.isfinite(lambdas)):
            raise DataError(f"need one finite lambda per group, got {len(lambdas)} for {len(alphas)} groups")
        object.__setattr__(self, "lambdas", lambdas)

    def check_partition(self, p: Partition) -> None:
        if len(self.alphas) != p.r:
            raise ConfigurationError(f"merge spec has {len(self.alphas)} groups, partition has {p.r}")
        for position, (alpha, group) in enumerate(zip(self.alphas, p.groups)):
            if alpha.size != len(group):
                raise ConfigurationError(f"group {position}: {alpha.size} alphas for {len(group)} experts")

    def to_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "alphas": [a.tolist() for a in self.alphas],
            "lambdas": list(self.lambdas),
            "eval_loss": self.eval_loss,
            "uniform_eval_loss": self.uniform_eval_loss,
        }


def uniform_alphas(p: Partition) -> MergeSpec:
    """alpha = 1/|group| for every member"""
    return MergeSpec(MergeStrategy.UNIFORM, tuple(np.full(len(g), 1.0 / len(g)) for g in p.groups))


def _layer_counts(counter, layer_index: int) -> np.ndarray:
    counts = getattr(counter, "counts", None)
    if counts is not None:
        if layer_index >= len(counts):
            raise ConfigurationError(f"visit counter covers {len(counts)} layers, not layer {layer_index}")
        return np.asarray(counts[layer_index])
    return np.asarray(counter)


def max_frequency_spec(p: Partition, counter, layer_index: int = 0) -> MergeSpec:
    """Indicator of the most visited member of each group; ties go to the lowest index"""
    counts = _layer_counts(counter, layer_index)
    if counts.size != p.n:
        raise ConfigurationError(f"visit counts cover {counts.size} experts, partition has {p.n}")
    alphas = []
    for group in p.groups:
        alpha = np.zeros(len(group))
        alpha[int(np.argmax(counts[list(group)]))] = 1.0
        alphas.append(alpha)
    return MergeSpec(MergeStrategy.MAX, tuple(alphas))


def frequency_weighted_spec(p: Partition, counter, layer_index: int = 0) -> MergeSpec:
    """alpha proportional to visit counts within each group, uniform for unvisited groups"""
    counts = _layer_counts(counter, layer_index).astype(np.float64)
    if counts.size != p.n:
        raise ConfigurationError(f"visit counts cover {counts.size} experts, partition has {p.n}")
    alphas = []
    for group in p.groups:
        c = counts[list(group)]
        alphas.append(c / c.sum() if c.sum() > 0 else np.full(len(group), 1.0 / len(group)))
    return MergeSpec(MergeStrategy.FREQUENCY, tuple(alphas))
