# similarity/representations.py - What stands in for an expert when comparing experts
import logging
from dataclasses import dataclass
from enum import Enum
from typing import List, Optional

import numpy as np

from core.exceptions import ConfigurationError, DimensionError
from core.experts import ExpertParams, expert_forward
from core.moe import MoELayer
from modelio.calibration import CalibrationBatch

logger = logging.getLogger(__name__)


class RepresentationKind(str, Enum):
    """Data-centric outputs, flattened weights, surrogate weight or router logits"""
    DATA = "data"
    VECTORIZED = "vectorized"
    SURROGATE = "surrogate"
    ROUTER = "router"

    @property
    def needs_calibration(self) -> bool:
        return self in (RepresentationKind.DATA, RepresentationKind.ROUTER)


@dataclass(frozen=True, eq=False)
class ExpertRepresentation:
    kind: RepresentationKind
    data: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "kind", RepresentationKind(self.kind))
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim != 2:
            raise DimensionError("representation must be a matrix", ("rows", "cols"), data.shape)
        object.__setattr__(self, "data", data)

    @property
    def shape(self):
        return self.data.shape


def mixup(X: np.ndarray, seed: int) -> np.ndarray:
    """
    Convex mixing of token embeddings.

    Each output row is lam * x_a + (1 - lam) * x_b for two distinct rows a, b and
    lam ~ U(0, 1). The output has as many rows as the input.
    """
    X = np.asarray(X, dtype=np.float64)
    s = X.shape[0]
    rng = np.random.default_rng(seed)
    a = rng.integers(0, s, size=s)
    b = (a + rng.integers(1, s, size=s)) % s
    lam = rng.uniform(0.0, 1.0, size=(s, 1))
    return lam * X[a] + (1.0 - lam) * X[b]


def represent_data_centric(
    layer: MoELayer,
    batch: CalibrationBatch,
    augment: bool = False,
    seed: int = 0,
) -> List[ExpertRepresentation]:
    """Every expert's output on the same batch, router disabled"""
    if batch.d_model != layer.d_model:
        raise DimensionError("calibration width must equal d_model", ("s", layer.d_model), batch.embeddings.shape)
    X = mixup(batch.embeddings, seed) if augment else batch.embeddings
    return [ExpertRepresentation(RepresentationKind.DATA, expert_forward(e, X)) for e in layer.experts]


def represent_vectorized(e: ExpertParams) -> ExpertRepresentation:
    """Row-major flatten of theta1, theta2, theta3, concatenated into one 1 x P row"""
    flat = np.concatenate([e.theta1.ravel(order="C"), e.theta2.ravel(order="C"), e.theta3.ravel(order="C")])
    return ExpertRepresentation(RepresentationKind.VECTORIZED, flat.astype(np.float64)[None, :])


def represent_surrogate(e: ExpertParams) -> ExpertRepresentation:
    """theta2 @ (theta1 * theta3), a d_model x d_model stand-in for the expert's weights"""
    if e.theta1.shape != e.theta3.shape:
        raise DimensionError("theta3 must match theta1", e.theta1.shape, e.theta3.shape)
    theta1 = e.theta1.astype(np.float64)
    theta3 = e.theta3.astype(np.float64)
    return ExpertRepresentation(RepresentationKind.SURROGATE, e.theta2.astype(np.float64) @ (theta1 * theta3))


def represent_router_logits(layer: MoELayer, batch: CalibrationBatch) -> List[ExpertRepresentation]:
    """Each expert's router logit on every token of the batch (s x 1)"""
    if batch.d_model != layer.d_model:
        raise DimensionError("calibration width must equal d_model", ("s", layer.d_model), batch.embeddings.shape)
    logits = batch.embeddings @ layer.router.astype(np.float64).T
    return [ExpertRepresentation(RepresentationKind.ROUTER, logits[:, [n]]) for n in range(layer.n_experts)]


def represent_layer(
    layer: MoELayer,
    kind: RepresentationKind,
    batch: Optional[CalibrationBatch] = None,
    augment: bool = False,
    seed: int = 0,
) -> List[ExpertRepresentation]:
    kind = RepresentationKind(kind)
    if kind.needs_calibration and batch is None:
        raise ConfigurationError(f"representation '{kind.value}' requires calibration data")
    if kind is RepresentationKind.DATA:
        return represent_data_centric(layer, batch, augment=augment, seed=seed)
    if kind is RepresentationKind.ROUTER:
        return represent_router_logits(layer, batch)
    if kind is RepresentationKind.VECTORIZED:
        return [represent_vectorized(e) for e in layer.experts]
    return [represent_surrogate(e) for e in layer.experts]
