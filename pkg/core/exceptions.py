# core/exceptions.py - Error hierarchy shared by every moe-shear module
import copy
from typing import Optional


class MoeShearError(Exception):
    """Base error; exit_code is what the command line returns for it"""

    exit_code = 1

    def __init__(self, message: str, *, layer: Optional[int] = None):
        super().__init__(message)
        self.message = message
        self.layer = layer

    def with_layer(self, layer: int) -> "MoeShearError":
        """Copy of this error with the layer index prefixed to the message"""
        err = copy.copy(self)
        err.message = f"layer {layer}: {self.message}"
        err.args = (err.message,)
        err.layer = layer
        return err

    def __str__(self) -> str:
        return self.message


class ConfigurationError(MoeShearError):
    """Infeasible settings: r/K out of range, guards exceeded, missing inputs"""

    exit_code = 2


class DataError(MoeShearError):
    """Input data is malformed or inconsistent"""

    exit_code = 3


class DimensionError(DataError):
    """Shape mismatch between two operands"""

    def __init__(self, what: str, expected, actual, **kwargs):
        super().__init__(f"{what}: expected shape {tuple(expected)}, got {tuple(actual)}", **kwargs)
        self.expected = tuple(expected)
        self.actual = tuple(actual)


class ParseError(DataError):
    """Model container could not be decoded"""

    def __init__(self, message: str, tensor: Optional[str] = None, **kwargs):
        if tensor is not None:
            message = f"tensor '{tensor}': {message}"
        super().__init__(message, **kwargs)
        self.tensor = tensor


class DegenerateInputError(DataError):
    """Too few samples for the requested statistic"""


class NumericError(MoeShearError):
    """A computation produced NaN/Inf or an undefined quantity"""

    exit_code = 4


class UndefinedSimilarityError(NumericError):
    """A representation has zero variance so its CKA is undefined"""
