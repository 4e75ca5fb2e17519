# pipeline/compare.py - Side-by-side comparison of pruning jobs and the count-guided baseline
import logging
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from core.exceptions import ConfigurationError
from core.moe import MoEModel
from merging.merge import TopKPolicy, drop_model
from modelio.calibration import CalibrationBatch
from pipeline.evaluate import evaluate_models
from pipeline.hints import count_visits
from pipeline.models import ComparisonRow, ComparisonTable, EvalReport, PruneJob
from pipeline.runner import execute_job, load_job_data

logger = logging.getLogger(__name__)

COUNT_GUIDED = "count-guided"


def least_visited(counts: np.ndarray, drop_count: int, protected: Iterable[int] = ()) -> List[int]:
    """The drop_count least visited unprotected experts; among equal counts the higher index goes first"""
    protected = set(protected)
    order = sorted((int(c), -i) for i, c in enumerate(counts) if i not in protected)
    if drop_count > len(order):
        raise ConfigurationError(f"cannot drop {drop_count} experts, only {len(order)} are unprotected")
    return sorted(-neg for _, neg in order[:drop_count])


def count_guided_model(
    m: MoEModel,
    fit: CalibrationBatch,
    r: int,
    protected: Iterable[int] = (),
    top_k_policy: TopKPolicy = TopKPolicy.PRESERVE,
) -> MoEModel:
    """Keep the r most visited experts of every layer and remove the rest with their router rows"""
    counter = count_visits(m, fit)
    extra = set(protected)
    drops = []
    for index, layer in enumerate(m.layers):
        if not 1 <= r <= layer.n_experts:
            raise ConfigurationError(f"r={r} must lie in [1, {layer.n_experts}]").with_layer(index)
        drops.append(least_visited(counter.counts[index], layer.n_experts - r, layer.protected | extra))
    return drop_model(m, drops, top_k_policy=top_k_policy)


def _row(name: str, job: Optional[PruneJob], strategy: str, r: int, report: EvalReport) -> ComparisonRow:
    return ComparisonRow(
        name=name,
        strategy=strategy,
        algorithm=job.algorithm.value if job else None,
        metric=job.metric.value if job else None,
        representation=job.representation.value if job else None,
        r=r,
        end_to_end_mse=report.end_to_end_mse,
        mean_layer_mse=float(np.mean([layer.reconstruction_mse for layer in report.layers])) if report.layers else 0.0,
        expert_params_after=report.expert_params_after,
    )


def compare_strategies(jobs: Sequence[PruneJob], threads: Optional[int] = None, count_guided: bool = True) -> ComparisonTable:
    """
    Run every job and tabulate its evaluation.

    Each distinct (model, calibration, r) setting also gets one count-guided row that
    keeps the r most visited experts per layer. Inputs are loaded once per setting.
    """
    table = ComparisonTable()
    loaded: Dict[Tuple, tuple] = {}
    baselines = set()
    for job in jobs:
        key = (job.model_path, job.calib_path, job.samples, job.eval_samples, job.seed)
        if key not in loaded:
            loaded[key] = load_job_data(job)
        model, fit, held_out, source = loaded[key]

        result = execute_job(model, job, fit, held_out, eval_source=source, threads=threads)
        table.rows.append(_row(job.label, job, job.strategy.value, job.r, result.report))

        baseline_key = key + (job.r, job.top_k_policy, tuple(job.protected))
        if count_guided and fit is not None and baseline_key not in baselines:
            baselines.add(baseline_key)
            pruned = count_guided_model(model, fit, job.r, job.protected, job.top_k_policy)
            report = evaluate_models(model, pruned, held_out.embeddings, eval_source=source)
            table.rows.append(_row(f"{COUNT_GUIDED}/r={job.r}", None, COUNT_GUIDED, job.r, report))
        logger.info(f"{job.label}: end-to-end MSE {result.report.end_to_end_mse:.6g}")
    return table
