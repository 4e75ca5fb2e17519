# similarity/kernels.py - Gram matrices, HSIC and centered kernel alignment
import logging
from enum import Enum

import numpy as np
from scipy.spatial.distance import pdist, squareform

import config
from core.exceptions import DegenerateInputError, DimensionError, UndefinedSimilarityError

logger = logging.getLogger(__name__)

# self-HSIC below this share of the raw kernel energy counts as zero variance
_DEGENERATE_RTOL = 1e-12


class Kernel(str, Enum):
    LINEAR = "linear"
    RBF = "rbf"


def linear_kernel(X: np.ndarray) -> np.ndarray:
    """Dot-product kernel between the rows of X"""
    return X @ X.T


def rbf_kernel(X: np.ndarray, bandwidth: float = 1.0) -> np.ndarray:
    """
    Gaussian kernel exp(-|a-b|^2 / (2 sigma^2)) between the rows of X.

    sigma is the median pairwise row distance times `bandwidth`. When every row is the
    same the distance median is 0 and the kernel is all ones.
    """
    sq = pdist(X, "sqeuclidean")
    sigma = np.median(np.sqrt(sq)) * bandwidth if sq.size else 0.0
    if sigma <= 0:
        return np.ones((X.shape[0], X.shape[0]))
    return np.exp(-squareform(sq) / (2.0 * sigma ** 2))


def center_kernel(K: np.ndarray) -> np.ndarray:
    """H K H with H = I - 11^T/s, computed from row and column means"""
    return K - K.mean(axis=0, keepdims=True) - K.mean(axis=1, keepdims=True) + K.mean()


def _check_square(K: np.ndarray, name: str) -> np.ndarray:
    K = np.asarray(K, dtype=np.float64)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise DimensionError(f"{name} must be a square kernel matrix", ("s", "s"), K.shape)
    if K.shape[0] < 2:
        raise DegenerateInputError(f"HSIC needs at least 2 samples, got {K.shape[0]}")
    return K


def hsic_centered(Kc_i: np.ndarray, Kc_j: np.ndarray) -> float:
    """HSIC from kernels that are already centered"""
    s = Kc_i.shape[0]
    return float(np.sum(Kc_i * Kc_j.T) / (s - 1) ** 2)


def hsic(Ki: np.ndarray, Kj: np.ndarray) -> float:
    """tr(Ki H Kj H) / (s-1)^2 with H = I - 11^T/s."""
    Ki = _check_square(Ki, "Ki")
    Kj = _check_square(Kj, "Kj")
    if Ki.shape != Kj.shape:
        raise DimensionError("HSIC kernels must have equal size", Ki.shape, Kj.shape)
    return hsic_centered(center_kernel(Ki), center_kernel(Kj))


def samples_view(R: np.ndarray) -> np.ndarray:
    """
    Rows of R are samples. A single-row representation (flattened weights) is read as
    one sample per entry, so its CKA is the squared correlation of the entries.
    """
    R = np.asarray(R, dtype=np.float64)
    if R.ndim == 1:
        R = R[None, :]
    if R.shape[0] == 1:
        return R.T
    return R


def gram(R: np.ndarray, kernel: Kernel = Kernel.LINEAR, bandwidth: float = None) -> np.ndarray:
    X = samples_view(R)
    if Kernel(kernel) is Kernel.LINEAR:
        return linear_kernel(X)
    return rbf_kernel(X, config.RBF_BANDWIDTH if bandwidth is None else bandwidth)


class CenteredGram:
    """Centered kernel of one representation with its self-HSIC, reused across pairs"""

    def __init__(self, R: np.ndarray, kernel: Kernel = Kernel.LINEAR, bandwidth: float = None):
        K = _check_square(gram(R, kernel, bandwidth), "kernel")
        self.centered = center_kernel(K)
        self.self_hsic = hsic_centered(self.centered, self.centered)
        s = K.shape[0]
        energy = float(np.sum(K * K)) / (s - 1) ** 2
        self.degenerate = self.self_hsic <= _DEGENERATE_RTOL * max(energy, 1e-300)

    def alignment(self, other: "CenteredGram") -> float:
        if self.centered.shape != other.centered.shape:
            raise DimensionError("CKA operands must have the same sample count", self.centered.shape, other.centered.shape)
        if self.degenerate or other.degenerate:
            raise UndefinedSimilarityError("representation has zero variance; CKA is undefined")
        value = hsic_centered(self.centered, other.centered) / np.sqrt(self.self_hsic * other.self_hsic)
        return float(np.clip(value, -1.0, 1.0))


def cka(Ri, Rj, kernel: Kernel = Kernel.LINEAR, bandwidth: float = None) -> float:
    """
    HSIC(Ki, Kj) / sqrt(HSIC(Ki, Ki) * HSIC(Kj, Kj)).

    Ri and Rj are ExpertRepresentations or plain matrices of the same shape.
    """
    Ri = getattr(Ri, "data", Ri)
    Rj = getattr(Rj, "data", Rj)
    Ri = np.asarray(Ri, dtype=np.float64)
    Rj = np.asarray(Rj, dtype=np.float64)
    if Ri.shape != Rj.shape:
        raise DimensionError("CKA representations must have the same shape", Ri.shape, Rj.shape)
    return CenteredGram(Ri, kernel, bandwidth).alignment(CenteredGram(Rj, kernel, bandwidth))
