# merging/learn.py - Learned merge coefficients by finite-difference SGD
import logging
from typing import Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ValidationError, validator
from scipy.special import softmax
from tqdm import tqdm

import config
from core.exceptions import ConfigurationError, DataError, NumericError
from core.moe import MoELayer, layer_forward
from grouping.partition import Partition
from merging.merge import merge_layer
from merging.spec import MergeSpec, MergeStrategy
from modelio.calibration import CalibrationBatch

logger = logging.getLogger(__name__)


class LearnConfig(BaseModel):
    """Plain SGD over softmax-parameterized alphas and per-group lambdas"""
    lr: float = config.LEARN_LR
    epochs: int = config.LEARN_EPOCHS
    samples: int = config.CALIB_SAMPLES
    train_fraction: float = config.LEARN_TRAIN_FRACTION
    batch_size: int = config.LEARN_BATCH
    fd_step: float = config.FD_STEP
    learn_lambda: bool = True
    seed: int = config.DEFAULT_SEED

    @validator("lr", "fd_step")
    def _positive(cls, v, field):
        if not v > 0:
            raise ValueError(f"{field.name} must be > 0")
        return v

    @validator("epochs")
    def _non_negative(cls, v):
        if v < 0:
            raise ValueError("epochs must be >= 0")
        return v

    @validator("samples", "batch_size")
    def _at_least_one(cls, v, field):
        if v < 1:
            raise ValueError(f"{field.name} must be >= 1")
        return v

    @validator("train_fraction")
    def _fraction(cls, v):
        if not 0.0 < v < 1.0:
            raise ValueError("train_fraction must lie in (0, 1)")
        return v

    @classmethod
    def build(cls, **values) -> "LearnConfig":
        try:
            return cls(**{k: v for k, v in values.items() if v is not None})
        except ValidationError as e:
            raise ConfigurationError(f"invalid learning settings: {e}")


class _Objective:
    """Maps a flat parameter vector to a merged layer and its reconstruction loss"""

    def __init__(self, layer: MoELayer, p: Partition, top_k: int, learn_lambda: bool):
        # float64 copy so finite differences are not swamped by float32 rounding
        self.layer = layer.replace(
            experts=tuple(e.astype(np.float64) for e in layer.experts),
            router=layer.router.astype(np.float64),
        )
        self.partition = p
        self.top_k = top_k
        self.learn_lambda = learn_lambda
        self.alpha_slices = []
        offset = 0
        for group in p.groups:
            size = len(group) if len(group) > 1 else 0
            self.alpha_slices.append(slice(offset, offset + size))
            offset += size
        self.lambda_offset = offset
        self.size = offset + (p.r if learn_lambda else 0)

    def initial(self) -> np.ndarray:
        params = np.zeros(self.size)
        if self.learn_lambda:
            params[self.lambda_offset:] = 1.0
        return params

    def spec(self, params: np.ndarray, **diagnostics) -> MergeSpec:
        alphas = []
        for group, sl in zip(self.partition.groups, self.alpha_slices):
            alphas.append(softmax(params[sl]) if len(group) > 1 else np.ones(1))
        lambdas = tuple(params[self.lambda_offset:]) if self.learn_lambda else None
        return MergeSpec(MergeStrategy.LEARN, tuple(alphas), lambdas, **diagnostics)

    def loss(self, params: np.ndarray, X: np.ndarray, Y: np.ndarray) -> float:
        merged = merge_layer(self.layer, self.partition, self.spec(params), top_k=self.top_k)
        return float(np.mean((layer_forward(merged, X) - Y) ** 2))

    def gradient(self, params: np.ndarray, X: np.ndarray, Y: np.ndarray, h: float) -> np.ndarray:
        grad = np.zeros_like(params)
        for i in range(params.size):
            step = np.zeros_like(params)
            step[i] = h
            grad[i] = (self.loss(params + step, X, Y) - self.loss(params - step, X, Y)) / (2.0 * h)
        return grad


def _stack(calib: Union[CalibrationBatch, Sequence[CalibrationBatch]]) -> np.ndarray:
    batches = [calib] if isinstance(calib, CalibrationBatch) else list(calib)
    if not batches:
        raise DataError("learning merge coefficients needs calibration data")
    return np.concatenate([b.embeddings for b in batches], axis=0)


def learn_alphas(
    layer: MoELayer,
    p: Partition,
    calib: Union[CalibrationBatch, Sequence[CalibrationBatch]],
    cfg: Optional[LearnConfig] = None,
    top_k: Optional[int] = None,
    layer_index: Optional[int] = None,
) -> MergeSpec:
    """
    Fit alphas (and lambdas) that minimize the MSE between the original layer output
    and the merged layer output.

    Rows are split train:eval by cfg.train_fraction. Training starts from uniform
    alphas with lambda = 1 and the returned spec is the iterate with the lowest eval
    loss, so it is never worse than uniform merging on the eval split.
    """
    cfg = cfg or LearnConfig()
    X = _stack(calib)[: cfg.samples]
    if X.shape[0] < 2:
        raise DataError(f"learning needs at least 2 calibration rows, got {X.shape[0]}")
    top_k = layer.top_k if top_k is None else top_k

    rng = np.random.default_rng(cfg.seed)
    order = rng.permutation(X.shape[0])
    n_train = min(max(1, int(round(X.shape[0] * cfg.train_fraction))), X.shape[0] - 1)
    X_train, X_eval = X[order[:n_train]], X[order[n_train:]]
    Y_train, Y_eval = layer_forward(layer, X_train), layer_forward(layer, X_eval)

    objective = _Objective(layer, p, top_k, cfg.learn_lambda)
    params = objective.initial()
    uniform_loss = objective.loss(params, X_eval, Y_eval)
    best_params, best_loss = params.copy(), uniform_loss
    if objective.size == 0:
        return objective.spec(best_params, eval_loss=best_loss, uniform_eval_loss=uniform_loss)

    label = f"learn layer {layer_index}" if layer_index is not None else "learn"
    for epoch in tqdm(range(cfg.epochs), desc=label, disable=not config.SHOW_PROGRESS, leave=False):
        shuffled = rng.permutation(n_train)
        for start in range(0, n_train, cfg.batch_size):
            rows = shuffled[start:start + cfg.batch_size]
            grad = objective.gradient(params, X_train[rows], Y_train[rows], cfg.fd_step)
            if not np.all(np.isfinite(grad)):
                raise NumericError(f"non-finite gradient at epoch {epoch}: params={params.tolist()}", layer=layer_index)
            params = params - cfg.lr * grad

        eval_loss = objective.loss(params, X_eval, Y_eval)
        if not np.isfinite(eval_loss):
            raise NumericError(
                f"non-finite eval loss at epoch {epoch} (lr={cfg.lr}): params={params.tolist()}", layer=layer_index
            )
        if eval_loss < best_loss:
            best_params, best_loss = params.copy(), eval_loss

    if best_loss >= uniform_loss:
        logger.warning(f"{label}: no iterate improved on uniform merging (eval loss {uniform_loss:.6g})")
    else:
        logger.info(f"{label}: eval loss {uniform_loss:.6g} -> {best_loss:.6g}")
    return objective.spec(best_params, eval_loss=best_loss, uniform_eval_loss=uniform_loss)
