# app.py - moe-shear command line: synthesize, compare, group, merge and evaluate MoE experts
import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import config
from core.exceptions import ConfigurationError, MoeShearError
from core.moe import layer_inputs
from core.utils import ensure_dir, load_json, save_json
from grouping.algorithms import PartitionAlgorithm, partition_layer
from grouping.partition import load_partitions, save_partitions
from merging.learn import LearnConfig
from merging.merge import TopKPolicy
from merging.spec import MergeStrategy
from modelio.calibration import (
    CalibrationBatch,
    fit_eval_split,
    random_embeddings,
    read_embeddings,
    sample_batches,
    save_calibration,
)
from modelio.container import load_model, save_model
from modelio.synthetic import SyntheticSpec, generate_synthetic
from pipeline.compare import compare_strategies
from pipeline.enumeration import apply_drops, enumerate_drop, write_enumeration
from pipeline.evaluate import evaluate_models
from pipeline.hints import hint_stats, write_hints_csv
from pipeline.models import PruneJob
from pipeline.runner import prune_with_partitions, run_pipeline
from similarity.matrix import Metric, build_layer_similarity, read_similarity_csv, write_similarity_csv
from similarity.representations import RepresentationKind

logger = logging.getLogger("moe-shear")


def _seed(args) -> int:
    return config.DEFAULT_SEED if args.seed is None else args.seed


def _sampled(path: str, rows: int, seed: int) -> CalibrationBatch:
    """One seeded batch of calibration rows"""
    embeddings, source_id = read_embeddings(path)
    return sample_batches(embeddings, rows, 1, seed, source_id)[0]


def _write_report(report, path: Optional[str]) -> None:
    if not path:
        return
    ensure_dir(Path(path).parent)
    Path(path).write_text(report.report_json(), encoding="utf-8")
    logger.info(f"Report written to {path}")


def _cmd_gen_synth(args) -> int:
    data = load_json(args.spec)
    if isinstance(data, dict) and "seed" not in data and args.seed is not None:
        data["seed"] = args.seed
    spec = SyntheticSpec.parse_spec(data)
    model = generate_synthetic(spec)
    save_model(model, args.out)
    logger.info(f"Synthetic model with {spec.n_layers} layers of {spec.n_experts} experts written to {args.out}")
    return 0


def _cmd_gen_calib(args) -> int:
    if args.rows < 2 or args.d_model < 1:
        raise ConfigurationError(f"need rows >= 2 and d_model >= 1, got {args.rows} x {args.d_model}")
    save_calibration(random_embeddings(args.rows, args.d_model, _seed(args)), args.out, source_id=args.source_id)
    logger.info(f"{args.rows} calibration rows written to {args.out}")
    return 0


def _cmd_sim(args) -> int:
    model = load_model(args.model)
    kind = RepresentationKind(args.repr)
    seed = _seed(args)
    inputs = None
    if kind.needs_calibration:
        if not args.calib:
            raise ConfigurationError(f"representation '{kind.value}' requires --calib")
        inputs = layer_inputs(model, _sampled(args.calib, args.samples, seed).embeddings)

    out_dir = ensure_dir(args.out_dir)
    for index, layer in enumerate(model.layers):
        batch = CalibrationBatch(inputs[index], f"layer{index}") if inputs is not None else None
        try:
            sim = build_layer_similarity(
                layer, kind, Metric(args.metric), batch=batch, augment=args.augment, seed=seed, bandwidth=args.bandwidth
            )
        except MoeShearError as e:
            raise e.with_layer(index)
        write_similarity_csv(sim, out_dir / f"sim_layer{index}.csv")
    logger.info(f"Wrote {model.n_layers} similarity matrices to {out_dir}")
    return 0


def _cmd_group(args) -> int:
    metric = Metric(args.metric) if args.metric else None
    algorithm = PartitionAlgorithm(args.algo)
    partitions = []
    for index, path in enumerate(args.sim):
        sim = read_similarity_csv(path, metric)
        try:
            p = partition_layer(sim, args.r, algorithm, protected=args.protected, seed=_seed(args))
        except MoeShearError as e:
            raise e.with_layer(index)
        logger.info(f"layer {index}: groups {p.to_lists()}", extra={"layer": index})
        partitions.append(p)
    save_partitions(partitions, args.out, algorithm=algorithm.value, r=args.r)
    return 0


def _cmd_prune(args) -> int:
    model = load_model(args.model)
    partitions = load_partitions(args.groups)
    strategy = MergeStrategy(args.strategy)
    seed = _seed(args)
    if args.calib:
        embeddings, source_id = read_embeddings(args.calib)
        fit, held_out = fit_eval_split(embeddings, args.samples, args.eval_samples, seed, source_id)
        source = "calibration"
    else:
        if strategy.needs_calibration:
            raise ConfigurationError(f"merge strategy '{strategy.value}' requires --calib")
        fit, source = None, "random"
        held_out = CalibrationBatch(random_embeddings(args.eval_samples, model.d_model, seed), source)

    learn = LearnConfig.build(lr=args.lr, epochs=args.epochs, seed=seed, samples=args.samples)
    result = prune_with_partitions(
        model,
        partitions,
        strategy,
        fit,
        held_out,
        learn=learn,
        top_k_policy=TopKPolicy(args.top_k_policy),
        eval_source=source,
        threads=args.threads,
    )
    save_model(result.pruned, args.out)
    _write_report(result.report, args.report)
    logger.info(f"Pruned model written to {args.out}, end-to-end MSE {result.report.end_to_end_mse:.6g}")
    return 0


def _cmd_enum_drop(args) -> int:
    model = load_model(args.model)
    batch = _sampled(args.calib, args.samples, _seed(args))
    policy = TopKPolicy(args.top_k_policy)
    result = enumerate_drop(model, args.drop, batch, threads=args.threads, top_k_policy=policy)
    write_enumeration(result, args.out_dir)
    if args.apply:
        save_model(apply_drops(model, result, top_k_policy=policy), args.apply)
        logger.info(f"Model with the best drop sets written to {args.apply}")
    return 0


def _cmd_hints(args) -> int:
    model = load_model(args.model)
    pruned = load_model(args.pruned) if args.pruned else None
    stats = hint_stats(model, _sampled(args.calib, args.samples, _seed(args)), pruned=pruned)
    write_hints_csv(stats, args.out)
    return 0


def _cmd_compare(args) -> int:
    data = load_json(args.jobs)
    entries = data.get("jobs") if isinstance(data, dict) else data
    if not isinstance(entries, list):
        raise ConfigurationError(f"{args.jobs} must hold a list of jobs or an object with a 'jobs' list")
    jobs = [PruneJob.parse_job(entry) for entry in entries]
    table = compare_strategies(jobs, threads=args.threads, count_guided=not args.no_baseline)
    save_json(table.dict(), args.out)
    logger.info(f"Comparison of {len(table.rows)} rows written to {args.out}")
    return 0


def _cmd_eval(args) -> int:
    model = load_model(args.model)
    pruned = load_model(args.pruned)
    if args.calib:
        X, source = _sampled(args.calib, args.eval_samples, _seed(args)).embeddings, "calibration"
    else:
        X, source = random_embeddings(args.eval_samples, model.d_model, _seed(args)), "random"
    report = evaluate_models(model, pruned, X, eval_source=source)
    _write_report(report, args.out)
    logger.info(f"End-to-end MSE {report.end_to_end_mse:.6g} on {report.eval_tokens} {source} tokens")
    return 0


_JOB_FLAGS = {
    "model": "model_path",
    "calib": "calib_path",
    "metric": "metric",
    "repr": "representation",
    "algo": "algorithm",
    "r": "r",
    "strategy": "strategy",
    "samples": "samples",
    "eval_samples": "eval_samples",
    "bandwidth": "bandwidth",
    "top_k_policy": "top_k_policy",
    "protected": "protected",
    "out_dir": "output_dir",
    "name": "name",
}


def _cmd_run(args) -> int:
    data = load_json(args.job) if args.job else {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{args.job} must hold a job object")
    for flag, field in _JOB_FLAGS.items():
        value = getattr(args, flag)
        if value is not None:
            data[field] = value
    if args.augment:
        data["augment"] = True
    if args.seed is not None:
        data["seed"] = args.seed
    learn = dict(data.get("learn") or {})
    for flag in ("lr", "epochs"):
        if getattr(args, flag) is not None:
            learn[flag] = getattr(args, flag)
    if learn:
        data["learn"] = learn
    run_pipeline(PruneJob.parse_job(data), threads=args.threads)
    return 0


def _add_choices(parser, flag: str, enum, default=None, **kwargs) -> None:
    parser.add_argument(flag, choices=[member.value for member in enum], default=default, **kwargs)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="moe-shear",
        description="Task-agnostic expert pruning for Mixture-of-Experts layers",
    )
    parser.add_argument("--seed", type=int, default=None, help="random seed (default from MOESHEAR_SEED)")
    parser.add_argument("--threads", type=int, default=None, help="worker threads for per-layer work")
    parser.add_argument("--log", choices=["plain", "json"], default=None, help="log line format")
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING or ERROR")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="Generate a synthetic model with planted duplicate experts")
    p.add_argument("--spec", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_synth)

    p = sub.add_parser("gen-calib", help="Write seeded standard-normal calibration embeddings")
    p.add_argument("--d-model", type=int, required=True)
    p.add_argument("--rows", type=int, required=True)
    p.add_argument("--source-id", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_calib)

    p = sub.add_parser("sim", help="Write one pairwise expert similarity CSV per layer")
    p.add_argument("--model", required=True)
    _add_choices(p, "--metric", Metric, default=Metric.CKA_LINEAR.value)
    _add_choices(p, "--repr", RepresentationKind, default=RepresentationKind.DATA.value)
    p.add_argument("--calib")
    p.add_argument("--samples", type=int, default=config.CALIB_SAMPLES)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--bandwidth", type=float, default=config.RBF_BANDWIDTH)
    p.add_argument("--out-dir", default=str(config.OUTPUT_DIR))
    p.set_defaults(func=_cmd_sim)

    p = sub.add_parser("group", help="Partition each layer's similarity matrix into r groups")
    p.add_argument("--sim", nargs="+", required=True, help="one CSV per layer, in layer order")
    p.add_argument("--r", type=int, required=True)
    _add_choices(p, "--algo", PartitionAlgorithm, default=PartitionAlgorithm.GREEDY.value)
    _add_choices(p, "--metric", Metric, help="metric of the CSVs (inferred when omitted)")
    p.add_argument("--protected", type=int, nargs="*", default=[])
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_group)

    p = sub.add_parser("prune", help="Merge each group of experts and write the pruned model")
    p.add_argument("--model", required=True)
    p.add_argument("--groups", required=True)
    _add_choices(p, "--strategy", MergeStrategy, default=MergeStrategy.UNIFORM.value)
    p.add_argument("--calib")
    p.add_argument("--samples", type=int, default=config.CALIB_SAMPLES)
    p.add_argument("--eval-samples", type=int, default=config.EVAL_SAMPLES)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epochs", type=int, default=None)
    _add_choices(p, "--top-k-policy", TopKPolicy, default=TopKPolicy.PRESERVE.value)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=_cmd_prune)

    p = sub.add_parser("enum-drop", help="Score every drop set of a fixed size per layer")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--drop", type=int, required=True)
    p.add_argument("--samples", type=int, default=config.CALIB_SAMPLES)
    _add_choices(p, "--top-k-policy", TopKPolicy, default=TopKPolicy.PRESERVE.value)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--apply", help="also write the model with each layer's best drop set removed")
    p.set_defaults(func=_cmd_enum_drop)

    p = sub.add_parser("hints", help="Expert visit shares on calibration data")
    p.add_argument("--model", required=True)
    p.add_argument("--calib", required=True)
    p.add_argument("--pruned")
    p.add_argument("--samples", type=int, default=config.CALIB_SAMPLES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_hints)

    p = sub.add_parser("compare", help="Run several jobs and tabulate their fidelity")
    p.add_argument("--jobs", required=True)
    p.add_argument("--no-baseline", action="store_true", help="skip the count-guided rows")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("eval", help="Compare a pruned model against its original")
    p.add_argument("--model", required=True)
    p.add_argument("--pruned", required=True)
    p.add_argument("--calib")
    p.add_argument("--eval-samples", type=int, default=config.EVAL_SAMPLES)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("run", help="Run a whole pruning job from a JSON file and/or flags")
    p.add_argument("--job")
    p.add_argument("--model")
    p.add_argument("--calib")
    _add_choices(p, "--metric", Metric)
    _add_choices(p, "--repr", RepresentationKind)
    _add_choices(p, "--algo", PartitionAlgorithm)
    p.add_argument("--r", type=int)
    _add_choices(p, "--strategy", MergeStrategy)
    p.add_argument("--samples", type=int)
    p.add_argument("--eval-samples", type=int)
    p.add_argument("--augment", action="store_true")
    p.add_argument("--bandwidth", type=float)
    _add_choices(p, "--top-k-policy", TopKPolicy)
    p.add_argument("--protected", type=int, nargs="*")
    p.add_argument("--lr", type=float)
    p.add_argument("--epochs", type=int)
    p.add_argument("--out-dir")
    p.add_argument("--name")
    p.set_defaults(func=_cmd_run)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    config.configure_logging(args.log, args.log_level)
    if args.threads is not None and args.threads < 1:
        logger.error(f"--threads must be >= 1, got {args.threads}")
        return ConfigurationError.exit_code
    try:
        return int(args.func(args))
    except MoeShearError as e:
        logger.error(str(e))
        return e.exit_code
    except Exception as e:
        logger.exception(f"Unexpected failure: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
