# pipeline/evaluate.py - Reconstruction error of a pruned model against its original
import logging
from typing import List, Optional, Sequence

import numpy as np

from core.exceptions import ConfigurationError, NumericError
from core.moe import MoELayer, MoEModel, layer_forward, layer_inputs, model_forward
from core.utils import payload_bytes
from pipeline.models import EvalReport, LayerReport

logger = logging.getLogger(__name__)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    value = float(np.mean((np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)) ** 2))
    if not np.isfinite(value):
        raise NumericError("reconstruction error is not finite")
    return value


def layer_reconstruction(original: MoELayer, pruned: MoELayer, X: np.ndarray) -> float:
    """MSE between two layers' outputs on the same inputs"""
    return mse(layer_forward(original, X), layer_forward(pruned, X))


def evaluate_models(
    original: MoEModel,
    pruned: MoEModel,
    X: np.ndarray,
    eval_source: str = "calibration",
    layer_details: Optional[Sequence[dict]] = None,
    wall_time: Optional[float] = None,
) -> EvalReport:
    """
    Layer-local and end-to-end fidelity on held-out tokens X.

    Layer l of both models is fed the original model's input to layer l, so per-layer
    errors do not compound. layer_details adds per-layer fields (groups, alphas, ...).
    """
    if original.n_layers != pruned.n_layers:
        raise ConfigurationError(f"models have {original.n_layers} and {pruned.n_layers} layers")
    inputs: List[np.ndarray] = layer_inputs(original, X)
    layers = []
    for index, (before, after, X_l) in enumerate(zip(original.layers, pruned.layers, inputs)):
        fields = dict(
            layer=index,
            experts_before=before.n_experts,
            experts_after=after.n_experts,
            top_k_after=after.top_k,
            reconstruction_mse=layer_reconstruction(before, after, X_l),
            params_before=before.n_params,
            params_after=after.n_params,
        )
        if layer_details is not None:
            fields.update(layer_details[index])
        layers.append(LayerReport(**fields))

    return EvalReport(
        layers=layers,
        end_to_end_mse=mse(model_forward(original, X), model_forward(pruned, X)),
        params_before=original.n_params,
        params_after=pruned.n_params,
        expert_params_before=original.expert_params,
        expert_params_after=pruned.expert_params,
        bytes_before=payload_bytes(original.n_params),
        bytes_after=payload_bytes(pruned.n_params),
        eval_source=eval_source,
        eval_tokens=int(np.asarray(X).shape[0]),
        wall_time=wall_time,
    )
