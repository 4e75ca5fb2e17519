# pipeline/models.py - Pydantic models for jobs and reports
from typing import Dict, List, Optional

import numpy as np
from pydantic import BaseModel, ValidationError, root_validator, validator

import config
from core.exceptions import ConfigurationError
from grouping.algorithms import PartitionAlgorithm
from merging.learn import LearnConfig
from merging.merge import TopKPolicy
from merging.spec import MergeStrategy
from similarity.matrix import Metric
from similarity.representations import RepresentationKind


class PruneJob(BaseModel):
    """Model for one pruning run"""
    model_path: str
    calib_path: Optional[str] = None
    metric: Metric = Metric.CKA_LINEAR
    representation: RepresentationKind = RepresentationKind.DATA
    algorithm: PartitionAlgorithm = PartitionAlgorithm.GREEDY
    r: int
    strategy: MergeStrategy = MergeStrategy.UNIFORM
    seed: int = config.DEFAULT_SEED
    samples: int = config.CALIB_SAMPLES
    eval_samples: int = config.EVAL_SAMPLES
    augment: bool = False
    bandwidth: float = config.RBF_BANDWIDTH
    top_k_policy: TopKPolicy = TopKPolicy.PRESERVE
    protected: List[int] = []
    learn: LearnConfig = LearnConfig()
    output_dir: Optional[str] = None
    name: Optional[str] = None

    class Config:
        extra = "forbid"

    @validator("r")
    def _positive_r(cls, v):
        if v < 1:
            raise ValueError("r must be >= 1")
        return v

    @validator("samples", "eval_samples")
    def _enough_rows(cls, v, field):
        if v < 2:
            raise ValueError(f"{field.name} must be >= 2")
        return v

    @root_validator(skip_on_failure=True)
    def _calibration_required(cls, values):
        if values.get("calib_path"):
            return values
        representation = values["representation"]
        strategy = values["strategy"]
        if representation.needs_calibration:
            raise ValueError(f"representation '{representation.value}' requires a calibration path")
        if strategy.needs_calibration:
            raise ValueError(f"merge strategy '{strategy.value}' requires a calibration path")
        return values

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        return f"{self.representation.value}/{self.metric.value}/{self.algorithm.value}/{self.strategy.value}/r={self.r}"

    @classmethod
    def parse_job(cls, data: dict) -> "PruneJob":
        try:
            return cls.parse_obj(data)
        except ValidationError as e:
            raise ConfigurationError(f"invalid prune job: {e}")


def _check_finite(values: dict, names) -> dict:
    for name in names:
        value = values.get(name)
        if value is not None and (not np.isfinite(value) or value < 0):
            raise ValueError(f"{name} must be finite and >= 0, got {value}")
    return values


class LayerReport(BaseModel):
    """Model for one layer's pruning outcome"""
    layer: int
    experts_before: int
    experts_after: int
    top_k_after: int
    groups: Optional[List[List[int]]] = None
    objective: Optional[float] = None
    reconstruction_mse: float
    uniform_mse: Optional[float] = None
    alphas: Optional[List[List[float]]] = None
    lambdas: Optional[List[float]] = None
    params_before: int
    params_after: int

    @root_validator(skip_on_failure=True)
    def _finite(cls, values):
        return _check_finite(values, ("reconstruction_mse", "uniform_mse"))


class EvalReport(BaseModel):
    """Model for the fidelity and size of a pruned model against its original"""
    layers: List[LayerReport]
    end_to_end_mse: float
    params_before: int
    params_after: int
    expert_params_before: int
    expert_params_after: int
    bytes_before: Dict[str, int]
    bytes_after: Dict[str, int]
    eval_source: str
    eval_tokens: int
    wall_time: Optional[float] = None

    @root_validator(skip_on_failure=True)
    def _finite(cls, values):
        return _check_finite(values, ("end_to_end_mse", "wall_time"))

    def report_json(self) -> str:
        """Deterministic JSON without wall-clock time"""
        return self.json(exclude={"wall_time"}, sort_keys=True, indent=2) + "\n"


class ComparisonRow(BaseModel):
    """Model for one strategy in a side-by-side comparison"""
    name: str
    strategy: str
    algorithm: Optional[str] = None
    metric: Optional[str] = None
    representation: Optional[str] = None
    r: int
    end_to_end_mse: float
    mean_layer_mse: float
    expert_params_after: int


class ComparisonTable(BaseModel):
    """Model for a comparison of several pruning jobs on one model"""
    rows: List[ComparisonRow] = []
