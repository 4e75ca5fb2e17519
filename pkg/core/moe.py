# core/moe.py - Sparse MoE layers, stacked models and the top-K forward pass
import logging
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, List, Optional, Sequence, Tuple

import numpy as np
from scipy.special import softmax

from core.counter import VisitCounter
from core.exceptions import ConfigurationError, DataError, DimensionError
from core.experts import ExpertParams, expert_forward, _as_tokens

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class MoELayer:
    """Router matrix W (N x d_model), N experts and the top-K routing configuration"""
    experts: Tuple[ExpertParams, ...]
    router: np.ndarray
    top_k: int
    renormalize_topk: bool = False
    protected: FrozenSet[int] = field(default_factory=frozenset)

    def __post_init__(self):
        experts = tuple(self.experts)
        if not experts:
            raise ConfigurationError("an MoE layer needs at least one expert")
        object.__setattr__(self, "experts", experts)

        router = np.asarray(self.router)
        if not np.issubdtype(router.dtype, np.floating):
            router = router.astype(np.float32)
        object.__setattr__(self, "router", router)

        d_model, d_ff = experts[0].d_model, experts[0].d_ff
        for index, expert in enumerate(experts):
            if (expert.d_model, expert.d_ff) != (d_model, d_ff):
                raise DimensionError(f"expert {index} shape", (d_ff, d_model), expert.theta1.shape)
        if router.shape != (len(experts), d_model):
            raise DimensionError("router must have one row per expert", (len(experts), d_model), router.shape)
        if not np.all(np.isfinite(router)):
            raise DataError("router contains non-finite entries")
        if not 1 <= int(self.top_k) <= len(experts):
            raise ConfigurationError(f"top_k={self.top_k} must lie in [1, {len(experts)}]")
        object.__setattr__(self, "top_k", int(self.top_k))

        protected = frozenset(int(i) for i in self.protected)
        if any(i < 0 or i >= len(experts) for i in protected):
            raise ConfigurationError(f"protected experts {sorted(protected)} out of range for {len(experts)} experts")
        object.__setattr__(self, "protected", protected)

    @property
    def n_experts(self) -> int:
        return len(self.experts)

    @property
    def d_model(self) -> int:
        return self.experts[0].d_model

    @property
    def d_ff(self) -> int:
        return self.experts[0].d_ff

    @property
    def activation(self):
        return self.experts[0].activation

    @property
    def expert_params(self) -> int:
        return sum(e.n_params for e in self.experts)

    @property
    def n_params(self) -> int:
        return self.expert_params + self.router.size

    def replace(self, **changes) -> "MoELayer":
        values = dict(
            experts=self.experts,
            router=self.router,
            top_k=self.top_k,
            renormalize_topk=self.renormalize_topk,
            protected=self.protected,
        )
        values.update(changes)
        return MoELayer(**values)


@dataclass(frozen=True, eq=False)
class MoEModel:
    """An ordered stack of MoE layers applied with a residual add"""
    layers: Tuple[MoELayer, ...]
    d_model: int
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        layers = tuple(self.layers)
        object.__setattr__(self, "layers", layers)
        object.__setattr__(self, "metadata", {str(k): str(v) for k, v in dict(self.metadata).items()})
        for index, layer in enumerate(layers):
            if layer.d_model != self.d_model:
                raise DimensionError(f"layer {index} d_model", (self.d_model,), (layer.d_model,))

    @property
    def n_layers(self) -> int:
        return len(self.layers)

    @property
    def expert_params(self) -> int:
        return sum(layer.expert_params for layer in self.layers)

    @property
    def n_params(self) -> int:
        return sum(layer.n_params for layer in self.layers)

    def with_layers(self, layers: Sequence[MoELayer], **metadata) -> "MoEModel":
        merged = dict(self.metadata)
        merged.update({k: str(v) for k, v in metadata.items()})
        return MoEModel(tuple(layers), self.d_model, merged)


def route_batch(layer: MoELayer, X: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Top-K routing for every token of X.

    Returns (indices, weights), both s x K, sorted by descending weight with ties going
    to the lower expert index. Weights are the full softmax probabilities unless the
    layer renormalizes them over the selected experts.
    """
    X = _as_tokens(X, layer.d_model)
    if layer.top_k > layer.n_experts:
        raise ConfigurationError(f"top_k={layer.top_k} exceeds {layer.n_experts} experts")

    logits = X @ layer.router.astype(np.float64, copy=False).T
    probs = softmax(logits, axis=1)
    # stable sort keeps lower indices first among equal probabilities
    order = np.argsort(-probs, axis=1, kind="stable")[:, : layer.top_k]
    weights = np.take_along_axis(probs, order, axis=1)
    if layer.renormalize_topk:
        weights = weights / weights.sum(axis=1, keepdims=True)
    return order, weights


def route(layer: MoELayer, x: np.ndarray) -> List[Tuple[int, float]]:
    """Top-K (expert_index, weight) pairs for a single token."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError("route expects a single token vector", (layer.d_model,), x.shape)
    if not np.all(np.isfinite(x)):
        raise DataError("token contains non-finite entries")
    indices, weights = route_batch(layer, x[None, :])
    return [(int(i), float(w)) for i, w in zip(indices[0], weights[0])]


def layer_forward(
    layer: MoELayer,
    X: np.ndarray,
    counter: Optional[VisitCounter] = None,
    layer_index: int = 0,
) -> np.ndarray:
    """y = sum over the token's top-K experts of p_n(x) * f_n(x)."""
    X = _as_tokens(X, layer.d_model)
    indices, weights = route_batch(layer, X)
    if counter is not None:
        counter.record(layer_index, indices)

    out = np.zeros_like(X)
    for n in np.unique(indices):
        tokens, slot = np.nonzero(indices == n)
        out[tokens] += weights[tokens, slot][:, None] * expert_forward(layer.experts[n], X[tokens])
    return out


def model_forward(m: MoEModel, X: np.ndarray, counter: Optional[VisitCounter] = None) -> np.ndarray:
    """Apply X <- X + layer_forward(layer, X) for each layer in order."""
    X = _as_tokens(X, m.d_model)
    for index, layer in enumerate(m.layers):
        X = X + layer_forward(layer, X, counter=counter, layer_index=index)
    return X


def layer_inputs(m: MoEModel, X: np.ndarray) -> List[np.ndarray]:
    """Inputs seen by each layer during model_forward (entry l feeds layer l)."""
    X = _as_tokens(X, m.d_model)
    inputs = []
    for layer in m.layers:
        inputs.append(X)
        X = X + layer_forward(layer, X)
    return inputs
