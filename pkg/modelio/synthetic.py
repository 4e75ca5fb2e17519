# modelio/synthetic.py - Toy MoE models with planted groups of near-duplicate experts
import logging
from pathlib import Path
from typing import List, Optional, Union

import numpy as np
from pydantic import BaseModel, ValidationError, root_validator, validator

from core.exceptions import ConfigurationError
from core.experts import Activation, ExpertParams
from core.moe import MoELayer, MoEModel
from core.utils import load_json

logger = logging.getLogger(__name__)


class SyntheticSpec(BaseModel):
    """Shape, planted groups and noise of a synthetic model"""
    n_experts: int
    d_model: int
    d_ff: int
    n_layers: int = 1
    top_k: int = 2
    duplicate_groups: Optional[List[List[int]]] = None
    noise_sigma: float = 0.0
    seed: int = 0
    activation: Activation = Activation.SILU
    renormalize_topk: bool = False
    router_scale: float = 1.0
    protected: List[int] = []

    class Config:
        extra = "forbid"
        use_enum_values = False

    @validator("n_experts", "d_model", "d_ff")
    def _positive(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("n_layers")
    def _non_negative(cls, v):
        if v < 0:
            raise ValueError("n_layers must be >= 0")
        return v

    @validator("noise_sigma", "router_scale")
    def _non_negative_float(cls, v, field):
        if not np.isfinite(v) or v < 0:
            raise ValueError(f"{field.name} must be finite and >= 0")
        return v

    @root_validator(skip_on_failure=True)
    def _check_groups(cls, values):
        n = values["n_experts"]
        if not 1 <= values["top_k"] <= n:
            raise ValueError(f"top_k must lie in [1, {n}]")
        groups = values.get("duplicate_groups")
        if groups is None:
            groups = [[i] for i in range(n)]
        flat = [i for g in groups for i in g]
        if any(not g for g in groups) or sorted(flat) != list(range(n)):
            raise ValueError(f"duplicate_groups must be a disjoint cover of 0..{n - 1}")
        values["duplicate_groups"] = [sorted(g) for g in groups]
        if any(i < 0 or i >= n for i in values.get("protected", [])):
            raise ValueError("protected experts out of range")
        return values

    @classmethod
    def parse_spec(cls, data: dict) -> "SyntheticSpec":
        try:
            return cls.parse_obj(data)
        except ValidationError as e:
            raise ConfigurationError(f"invalid synthetic spec: {e}")

    @classmethod
    def from_file(cls, path: Union[str, Path]) -> "SyntheticSpec":
        return cls.parse_spec(load_json(path))


def _planted(rng: np.random.Generator, base: np.ndarray, sigma: float, is_base: bool) -> np.ndarray:
    if is_base:
        return base.astype(np.float32)
    return (base + rng.normal(0.0, sigma, size=base.shape)).astype(np.float32)


def _generate_layer(spec: SyntheticSpec, rng: np.random.Generator) -> MoELayer:
    experts: List[Optional[ExpertParams]] = [None] * spec.n_experts
    router = np.zeros((spec.n_experts, spec.d_model), dtype=np.float32)

    for group in spec.duplicate_groups:
        theta1 = rng.normal(0.0, 1.0 / np.sqrt(spec.d_model), size=(spec.d_ff, spec.d_model))
        theta2 = rng.normal(0.0, 1.0 / np.sqrt(spec.d_ff), size=(spec.d_model, spec.d_ff))
        theta3 = rng.normal(0.0, 1.0 / np.sqrt(spec.d_model), size=(spec.d_ff, spec.d_model))
        row = rng.normal(0.0, spec.router_scale, size=spec.d_model)
        for position, index in enumerate(group):
            first = position == 0
            experts[index] = ExpertParams(
                _planted(rng, theta1, spec.noise_sigma, first),
                _planted(rng, theta2, spec.noise_sigma, first),
                _planted(rng, theta3, spec.noise_sigma, first),
                spec.activation,
            )
            router[index] = _planted(rng, row, spec.noise_sigma, first)

    return MoELayer(
        experts=tuple(experts),
        router=router,
        top_k=spec.top_k,
        renormalize_topk=spec.renormalize_topk,
        protected=frozenset(spec.protected),
    )


def generate_synthetic(spec: SyntheticSpec) -> MoEModel:
    """
    Build a model whose experts come in planted groups.

    Within a group the first member holds a random base expert and router row; every
    other member is the base plus i.i.d. N(0, noise_sigma^2) noise per entry. With
    noise_sigma=0 the group members are bitwise duplicates. The result depends
    only on `spec`.
    """
    rng = np.random.default_rng(spec.seed)
    layers = [_generate_layer(spec, rng) for _ in range(spec.n_layers)]
    logger.debug(f"Generated synthetic model: {spec.n_layers} layers x {spec.n_experts} experts, sigma={spec.noise_sigma}")
    return MoEModel(tuple(layers), spec.d_model, {"source": "synthetic", "seed": str(spec.seed)})
