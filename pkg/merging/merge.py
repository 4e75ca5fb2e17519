# merging/merge.py - Weight-space merging and pure removal of experts
import logging
from enum import Enum
from typing import Iterable, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ConfigurationError, MoeShearError
from core.experts import ExpertParams
from core.moe import MoELayer, MoEModel
from grouping.partition import Partition
from merging.spec import MergeSpec, MergeStrategy

logger = logging.getLogger(__name__)


class TopKPolicy(str, Enum):
    """How K changes when a layer shrinks from N to r experts"""
    PRESERVE = "preserve"
    SCALE = "scale"


def pruned_top_k(top_k: int, n_experts: int, r: int, policy: TopKPolicy = TopKPolicy.PRESERVE) -> int:
    """K for the pruned layer: unchanged, or max(1, floor(K * r / N)) under the scale policy"""
    if TopKPolicy(policy) is TopKPolicy.SCALE:
        return max(1, (top_k * r) // n_experts)
    return top_k


def _check_top_k(top_k: int, r: int) -> None:
    if top_k > r:
        raise ConfigurationError(
            f"top_k={top_k} exceeds the {r} experts left after pruning; lower K (or use --top-k-policy scale)"
        )


def merge_layer(layer: MoELayer, p: Partition, spec: MergeSpec, top_k: Optional[int] = None) -> MoELayer:
    """
    Collapse every group of p into one expert and one router row.

    Group n becomes lambda_n * sum_i alpha_i theta_i for each weight matrix and
    sum_i alpha_i W_i for its router row. Merged experts are ordered by the smallest
    original index of their group and keep the layer's storage dtype.
    """
    p.validate(layer.n_experts, layer.protected)
    spec.check_partition(p)
    top_k = layer.top_k if top_k is None else int(top_k)
    _check_top_k(top_k, p.r)

    dtype = layer.experts[0].dtype
    router64 = layer.router.astype(np.float64)
    experts = []
    router = np.empty((p.r, layer.d_model), dtype=layer.router.dtype)
    for n, (group, alpha, lam) in enumerate(zip(p.groups, spec.alphas, spec.lambdas)):
        merged = []
        for name in ("theta1", "theta2", "theta3"):
            total = sum(a * getattr(layer.experts[i], name).astype(np.float64) for a, i in zip(alpha, group))
            if spec.strategy is MergeStrategy.LEARN:
                total = lam * total
            merged.append(total.astype(dtype))
        experts.append(ExpertParams(*merged, activation=layer.activation))
        router[n] = alpha @ router64[list(group)]

    positions = {i: n for n, group in enumerate(p.groups) for i in group}
    protected = frozenset(positions[i] for i in layer.protected)
    return layer.replace(experts=tuple(experts), router=router, top_k=top_k, protected=protected)


def drop_experts(layer: MoELayer, dropped: Iterable[int], top_k: Optional[int] = None) -> MoELayer:
    """Remove experts and their router rows without merging"""
    dropped = sorted(set(int(i) for i in dropped))
    if any(i < 0 or i >= layer.n_experts for i in dropped):
        raise ConfigurationError(f"cannot drop {dropped} from a layer of {layer.n_experts} experts")
    if layer.protected.intersection(dropped):
        raise ConfigurationError(f"protected experts {sorted(layer.protected.intersection(dropped))} cannot be dropped")
    kept = [i for i in range(layer.n_experts) if i not in dropped]
    if not kept:
        raise ConfigurationError("cannot drop every expert of a layer")
    top_k = layer.top_k if top_k is None else int(top_k)
    _check_top_k(top_k, len(kept))

    positions = {i: n for n, i in enumerate(kept)}
    return layer.replace(
        experts=tuple(layer.experts[i] for i in kept),
        router=layer.router[kept].copy(),
        top_k=top_k,
        protected=frozenset(positions[i] for i in layer.protected),
    )


def prune_model(
    m: MoEModel,
    per_layer: Sequence[Tuple[Partition, MergeSpec]],
    top_k_policy: TopKPolicy = TopKPolicy.PRESERVE,
) -> MoEModel:
    """Apply merge_layer to every layer; failures carry the layer index"""
    if len(per_layer) != m.n_layers:
        raise ConfigurationError(f"got merge plans for {len(per_layer)} layers, model has {m.n_layers}")
    layers = []
    for index, (layer, (p, spec)) in enumerate(zip(m.layers, per_layer)):
        try:
            k = pruned_top_k(layer.top_k, layer.n_experts, p.r, top_k_policy)
            layers.append(merge_layer(layer, p, spec, top_k=k))
        except MoeShearError as e:
            raise e.with_layer(index)
    pruned = m.with_layers(layers, pruned="true")
    logger.info(f"Pruned model: {m.expert_params} -> {pruned.expert_params} expert parameters")
    return pruned


def drop_model(
    m: MoEModel,
    drops: Sequence[Iterable[int]],
    top_k_policy: TopKPolicy = TopKPolicy.PRESERVE,
) -> MoEModel:
    """Remove one drop set per layer"""
    if len(drops) != m.n_layers:
        raise ConfigurationError(f"got drop sets for {len(drops)} layers, model has {m.n_layers}")
    layers = []
    for index, (layer, dropped) in enumerate(zip(m.layers, drops)):
        dropped = list(dropped)
        try:
            k = pruned_top_k(layer.top_k, layer.n_experts, layer.n_experts - len(set(dropped)), top_k_policy)
            layers.append(drop_experts(layer, dropped, top_k=k))
        except MoeShearError as e:
            raise e.with_layer(index)
    return m.with_layers(layers, pruned="true")


def expert_param_count(n_layers: int, r: int, d_model: int, d_ff: int) -> int:
    """Expert weights of a model with r experts in each of n_layers layers"""
    return n_layers * r * 3 * d_model * d_ff
