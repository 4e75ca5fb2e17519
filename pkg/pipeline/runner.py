# pipeline/runner.py - End-to-end pruning: represent, compare, partition, merge, evaluate
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

import config
from core.counter import VisitCounter
from core.exceptions import ConfigurationError, MoeShearError
from core.moe import MoEModel, layer_inputs, model_forward
from core.utils import ensure_dir, save_json
from grouping.algorithms import partition_layer
from grouping.partition import Partition, save_partitions
from merging.learn import LearnConfig, learn_alphas
from merging.merge import TopKPolicy, merge_layer, pruned_top_k
from merging.spec import MergeSpec, MergeStrategy, frequency_weighted_spec, max_frequency_spec, uniform_alphas
from modelio.calibration import CalibrationBatch, fit_eval_split, random_embeddings, read_embeddings
from modelio.container import load_model, save_model
from pipeline.evaluate import evaluate_models, layer_reconstruction
from pipeline.models import EvalReport, PruneJob
from similarity.matrix import SimilarityMatrix, build_layer_similarity, write_similarity_csv

logger = logging.getLogger(__name__)


@dataclass
class LayerPlan:
    index: int
    partition: Partition
    spec: MergeSpec
    top_k: int
    similarity: Optional[SimilarityMatrix] = None


@dataclass
class PruneResult:
    pruned: MoEModel
    plans: List[LayerPlan]
    report: EvalReport

    @property
    def partitions(self) -> List[Partition]:
        return [plan.partition for plan in self.plans]


def _fan_out(work, n_layers: int, threads: Optional[int], desc: str) -> list:
    """Map work over layer indices on a thread pool, results in layer order"""
    with ThreadPoolExecutor(max_workers=threads or config.THREADS) as executor:
        return list(tqdm(
            executor.map(work, range(n_layers)),
            total=n_layers,
            desc=desc,
            disable=not config.SHOW_PROGRESS,
            leave=False,
        ))


def load_job_data(job: PruneJob) -> Tuple[MoEModel, Optional[CalibrationBatch], CalibrationBatch, str]:
    """Model, fit batch (None without calibration), held-out batch and where the held-out tokens came from"""
    model = load_model(job.model_path)
    if job.calib_path:
        embeddings, source_id = read_embeddings(job.calib_path)
        fit, held_out = fit_eval_split(embeddings, job.samples, job.eval_samples, job.seed, source_id)
        return model, fit, held_out, "calibration"
    held_out = CalibrationBatch(random_embeddings(job.eval_samples, model.d_model, job.seed), "random")
    return model, None, held_out, "random"


def group_layer(
    index: int,
    model: MoEModel,
    job: PruneJob,
    fit_inputs: Optional[List[np.ndarray]],
) -> Tuple[SimilarityMatrix, Partition]:
    """Similarity matrix and partition of one layer"""
    layer = model.layers[index]
    try:
        batch = CalibrationBatch(fit_inputs[index], f"layer{index}") if fit_inputs is not None else None
        sim = build_layer_similarity(
            layer, job.representation, job.metric, batch=batch, augment=job.augment, seed=job.seed, bandwidth=job.bandwidth
        )
        protected = set(layer.protected) | set(job.protected)
        p = partition_layer(sim, job.r, job.algorithm, protected=protected, seed=job.seed)
    except MoeShearError as e:
        raise e.with_layer(index)
    logger.info(f"layer {index}: {layer.n_experts} -> {p.r} experts, groups {p.to_lists()}", extra={"layer": index})
    return sim, p


def _layer_spec(
    index: int,
    model: MoEModel,
    partitions: Sequence[Partition],
    strategy: MergeStrategy,
    top_k_policy: TopKPolicy,
    fit_inputs: Optional[List[np.ndarray]],
    counter: Optional[VisitCounter],
    learn: LearnConfig,
) -> LayerPlan:
    layer, p = model.layers[index], partitions[index]
    try:
        top_k = pruned_top_k(layer.top_k, layer.n_experts, p.r, top_k_policy)
        if strategy is MergeStrategy.UNIFORM:
            spec = uniform_alphas(p)
        elif strategy is MergeStrategy.MAX:
            spec = max_frequency_spec(p, counter, index)
        elif strategy is MergeStrategy.FREQUENCY:
            spec = frequency_weighted_spec(p, counter, index)
        else:
            X = fit_inputs[index]
            cfg = learn.copy(update={"samples": min(learn.samples, X.shape[0])})
            spec = learn_alphas(layer, p, CalibrationBatch(X, f"layer{index}"), cfg, top_k=top_k, layer_index=index)
    except MoeShearError as e:
        raise e.with_layer(index)
    return LayerPlan(index, p, spec, top_k)


def prune_with_partitions(
    model: MoEModel,
    partitions: Sequence[Partition],
    strategy: MergeStrategy,
    fit: Optional[CalibrationBatch],
    held_out: CalibrationBatch,
    learn: Optional[LearnConfig] = None,
    top_k_policy: TopKPolicy = TopKPolicy.PRESERVE,
    eval_source: str = "calibration",
    threads: Optional[int] = None,
) -> PruneResult:
    """
    Build merge specs for given partitions, merge every layer and evaluate.

    Each layer report carries the uniform-merge error ("before") next to the chosen
    strategy's error, both on held-out inputs.
    """
    strategy = MergeStrategy(strategy)
    if len(partitions) != model.n_layers:
        raise ConfigurationError(f"got groups for {len(partitions)} layers, model has {model.n_layers}")
    if strategy.needs_calibration and fit is None:
        raise ConfigurationError(f"merge strategy '{strategy.value}' requires calibration data")

    fit_inputs = layer_inputs(model, fit.embeddings) if fit is not None else None
    counter = None
    if strategy in (MergeStrategy.MAX, MergeStrategy.FREQUENCY):
        counter = VisitCounter.for_model(model)
        model_forward(model, fit.embeddings, counter=counter)

    work = partial(
        _layer_spec,
        model=model,
        partitions=partitions,
        strategy=strategy,
        top_k_policy=top_k_policy,
        fit_inputs=fit_inputs,
        counter=counter,
        learn=learn or LearnConfig(),
    )
    plans = _fan_out(work, model.n_layers, threads, "merge")

    layers = []
    for plan in plans:
        try:
            layers.append(merge_layer(model.layers[plan.index], plan.partition, plan.spec, top_k=plan.top_k))
        except MoeShearError as e:
            raise e.with_layer(plan.index)
    pruned = model.with_layers(layers, pruned="true")

    held_inputs = layer_inputs(model, held_out.embeddings)
    details = []
    for plan, X_l in zip(plans, held_inputs):
        layer = model.layers[plan.index]
        uniform = merge_layer(layer, plan.partition, uniform_alphas(plan.partition), top_k=plan.top_k)
        details.append({
            "groups": plan.partition.to_lists(),
            "objective": plan.partition.objective_value,
            "uniform_mse": layer_reconstruction(layer, uniform, X_l),
            "alphas": [a.tolist() for a in plan.spec.alphas],
            "lambdas": list(plan.spec.lambdas) if plan.spec.strategy is MergeStrategy.LEARN else None,
        })
    report = evaluate_models(model, pruned, held_out.embeddings, eval_source=eval_source, layer_details=details)
    return PruneResult(pruned, plans, report)


def execute_job(
    model: MoEModel,
    job: PruneJob,
    fit: Optional[CalibrationBatch],
    held_out: CalibrationBatch,
    eval_source: str = "calibration",
    threads: Optional[int] = None,
) -> PruneResult:
    """Prune an in-memory model as the job describes and evaluate it on held_out"""
    if (job.representation.needs_calibration or job.strategy.needs_calibration) and fit is None:
        raise ConfigurationError(f"job {job.label} requires calibration data")
    fit_inputs = layer_inputs(model, fit.embeddings) if fit is not None else None
    grouped = _fan_out(
        partial(group_layer, model=model, job=job, fit_inputs=fit_inputs), model.n_layers, threads, "group"
    )
    result = prune_with_partitions(
        model,
        [p for _, p in grouped],
        job.strategy,
        fit,
        held_out,
        learn=job.learn.copy(update={"seed": job.seed}),
        top_k_policy=job.top_k_policy,
        eval_source=eval_source,
        threads=threads,
    )
    for plan, (sim, _) in zip(result.plans, grouped):
        plan.similarity = sim
    return result


def run_pipeline(job: PruneJob, threads: Optional[int] = None) -> EvalReport:
    """
    Run a job from files and write its artifacts.

    Writes pruned.bin, groups.json, report.json, timings.json and one
    sim_layer{l}.csv per layer into the job's output directory.
    """
    started = time.perf_counter()
    out_dir = ensure_dir(Path(job.output_dir) if job.output_dir else config.OUTPUT_DIR)
    model, fit, held_out, source = load_job_data(job)
    logger.info(f"Running job {job.label} on {model.n_layers} layers")

    result = execute_job(model, job, fit, held_out, eval_source=source, threads=threads)
    for plan in result.plans:
        write_similarity_csv(plan.similarity, out_dir / f"sim_layer{plan.index}.csv")
    save_partitions(result.partitions, out_dir / "groups.json", algorithm=job.algorithm.value, r=job.r)
    save_model(result.pruned, out_dir / "pruned.bin")

    report = result.report.copy(update={"wall_time": time.perf_counter() - started})
    (out_dir / "report.json").write_text(report.report_json(), encoding="utf-8")
    save_json({"wall_time": report.wall_time}, out_dir / "timings.json")
    logger.info(f"Job {job.label}: end-to-end MSE {report.end_to_end_mse:.6g}, outputs in {out_dir}")
    return report
