# core/counter.py - Per-layer expert visit counting
from typing import List, Sequence

import numpy as np

from core.exceptions import ConfigurationError


class VisitCounter:
    """
    Counts how often each expert lands in a token's top-K, per layer.

    Each worker owns its own counter; counters over the same model are combined with
    `merge` (or `+`). Per layer, counts sum to tokens * K.
    """

    def __init__(self, experts_per_layer: Sequence[int]):
        self.counts: List[np.ndarray] = [np.zeros(int(n), dtype=np.int64) for n in experts_per_layer]
        self.tokens: List[int] = [0 for _ in experts_per_layer]

    @classmethod
    def for_model(cls, model) -> "VisitCounter":
        return cls([layer.n_experts for layer in model.layers])

    @property
    def n_layers(self) -> int:
        return len(self.counts)

    def record(self, layer_index: int, selected: np.ndarray) -> None:
        """Add one visit per entry of an (s x K) matrix of selected expert indices."""
        selected = np.asarray(selected)
        n = self.counts[layer_index].size
        self.counts[layer_index] += np.bincount(selected.ravel(), minlength=n)[:n]
        self.tokens[layer_index] += selected.shape[0]

    def merge(self, other: "VisitCounter") -> "VisitCounter":
        if [c.size for c in self.counts] != [c.size for c in other.counts]:
            raise ConfigurationError("cannot merge visit counters of differently shaped models")
        merged = VisitCounter([c.size for c in self.counts])
        merged.counts = [a + b for a, b in zip(self.counts, other.counts)]
        merged.tokens = [a + b for a, b in zip(self.tokens, other.tokens)]
        return merged

    __add__ = merge

    def shares(self, layer_index: int) -> np.ndarray:
        """Visit share per expert; sums to 1 over the layer once anything was recorded."""
        total = self.counts[layer_index].sum()
        if total == 0:
            return np.zeros(self.counts[layer_index].size)
        return self.counts[layer_index] / total
