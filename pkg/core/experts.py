# core/experts.py - Gated feed-forward experts and their forward pass
import logging
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy.special import expit

from core.exceptions import DataError, DimensionError

logger = logging.getLogger(__name__)

_GELU_C = np.sqrt(2.0 / np.pi)


class Activation(str, Enum):
    """Nonlinearity applied to the gate projection"""
    SILU = "silu"
    RELU = "relu"
    GELU_TANH = "gelu-tanh"

    def apply(self, z: np.ndarray) -> np.ndarray:
        if self is Activation.SILU:
            return z * expit(z)
        if self is Activation.RELU:
            return np.maximum(z, 0.0)
        return 0.5 * z * (1.0 + np.tanh(_GELU_C * (z + 0.044715 * z ** 3)))


@dataclass(frozen=True, eq=False)
class ExpertParams:
    """
    Weights of one gated FFN expert.

    theta1 (gate) and theta3 (up) are d_ff x d_model, theta2 (down) is d_model x d_ff.
    Storage dtype is preserved (float32 for anything loaded or generated); forward
    computations upcast to float64.
    """
    theta1: np.ndarray
    theta2: np.ndarray
    theta3: np.ndarray
    activation: Activation = Activation.SILU

    def __post_init__(self):
        for name in ("theta1", "theta2", "theta3"):
            value = np.asarray(getattr(self, name))
            if value.ndim != 2:
                raise DimensionError(f"expert {name} must be a matrix", ("d_out", "d_in"), value.shape)
            if not np.issubdtype(value.dtype, np.floating):
                value = value.astype(np.float32)
            if not np.all(np.isfinite(value)):
                raise DataError(f"expert {name} contains non-finite entries")
            object.__setattr__(self, name, value)
        object.__setattr__(self, "activation", Activation(self.activation))

        if self.theta1.shape != self.theta3.shape:
            raise DimensionError("theta3 must match theta1", self.theta1.shape, self.theta3.shape)
        d_ff, d_model = self.theta1.shape
        if self.theta2.shape != (d_model, d_ff):
            raise DimensionError("theta2 must be d_model x d_ff", (d_model, d_ff), self.theta2.shape)

    @property
    def d_model(self) -> int:
        return self.theta1.shape[1]

    @property
    def d_ff(self) -> int:
        return self.theta1.shape[0]

    @property
    def dtype(self) -> np.dtype:
        return self.theta1.dtype

    @property
    def n_params(self) -> int:
        return self.theta1.size + self.theta2.size + self.theta3.size

    def astype(self, dtype) -> "ExpertParams":
        return ExpertParams(
            self.theta1.astype(dtype, copy=False),
            self.theta2.astype(dtype, copy=False),
            self.theta3.astype(dtype, copy=False),
            self.activation,
        )

    def same_weights(self, other: "ExpertParams") -> bool:
        """Bitwise equality of all three matrices and the activation"""
        return (
            self.activation == other.activation
            and np.array_equal(self.theta1, other.theta1)
            and np.array_equal(self.theta2, other.theta2)
            and np.array_equal(self.theta3, other.theta3)
        )


def _as_tokens(X: np.ndarray, d_model: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != d_model:
        raise DimensionError("token matrix width must equal d_model", ("s", d_model), X.shape)
    return X


def expert_forward(e: ExpertParams, X: np.ndarray) -> np.ndarray:
    """f(x) = theta2 (act(theta1 x) * theta3 x), row-wise over an s x d_model token matrix."""
    X = _as_tokens(X, e.d_model)
    theta1 = e.theta1.astype(np.float64, copy=False)
    theta2 = e.theta2.astype(np.float64, copy=False)
    theta3 = e.theta3.astype(np.float64, copy=False)

    hidden = e.activation.apply(X @ theta1.T) * (X @ theta3.T)
    return hidden @ theta2.T
