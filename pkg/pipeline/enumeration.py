# pipeline/enumeration.py - Exhaustive per-layer search over expert drop sets
import logging
from concurrent.futures import ThreadPoolExecutor
from functools import partial
from itertools import combinations
from math import comb
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel
from tqdm import tqdm

import config
from core.exceptions import ConfigurationError, MoeShearError
from core.moe import MoEModel, layer_forward, layer_inputs
from core.utils import ensure_dir, save_json, write_rows_csv
from merging.merge import TopKPolicy, drop_experts, drop_model, pruned_top_k
from modelio.calibration import CalibrationBatch
from pipeline.evaluate import mse

logger = logging.getLogger(__name__)


class DropRow(BaseModel):
    """Model for one candidate drop set and its layer loss"""
    dropped: List[int]
    loss: float


class LayerDropTable(BaseModel):
    """Model for every drop set tried on one layer"""
    layer: int
    rows: List[DropRow]
    best: List[int]
    best_loss: float


class DropEnumeration(BaseModel):
    """Model for an enumeration run over all layers"""
    drop_count: int
    layers: List[LayerDropTable]

    @property
    def best_sets(self) -> List[List[int]]:
        return [table.best for table in self.layers]


def _tokens(calib: Union[CalibrationBatch, Sequence[CalibrationBatch], np.ndarray]) -> np.ndarray:
    if isinstance(calib, CalibrationBatch):
        return calib.embeddings
    if isinstance(calib, np.ndarray):
        return calib
    return np.concatenate([b.embeddings for b in calib], axis=0)


def check_enumeration_guard(m: MoEModel, drop_count: int) -> None:
    for index, layer in enumerate(m.layers):
        if not 0 <= drop_count < layer.n_experts:
            raise ConfigurationError(f"layer {index}: cannot drop {drop_count} of {layer.n_experts} experts")
        total = comb(layer.n_experts, drop_count)
        if total > config.ENUM_MAX_COMBINATIONS:
            raise ConfigurationError(
                f"layer {index}: C({layer.n_experts}, {drop_count}) = {total} drop sets exceeds the limit of "
                f"{config.ENUM_MAX_COMBINATIONS}; use similarity grouping with the greedy partitioner instead"
            )


def _enumerate_layer(
    index: int,
    m: MoEModel,
    inputs: List[np.ndarray],
    drop_count: int,
    top_k_policy: TopKPolicy,
) -> LayerDropTable:
    layer = m.layers[index]
    X = inputs[index]
    reference = layer_forward(layer, X)
    k = pruned_top_k(layer.top_k, layer.n_experts, layer.n_experts - drop_count, top_k_policy)
    candidates = [
        c for c in combinations(range(layer.n_experts), drop_count)
        if not layer.protected.intersection(c)
    ]
    rows = []
    try:
        for dropped in tqdm(candidates, desc=f"enum layer {index}", disable=not config.SHOW_PROGRESS, leave=False):
            reduced = drop_experts(layer, dropped, top_k=k)
            rows.append(DropRow(dropped=list(dropped), loss=mse(reference, layer_forward(reduced, X))))
    except MoeShearError as e:
        raise e.with_layer(index)
    if not rows:
        raise ConfigurationError("every drop set touches a protected expert").with_layer(index)

    # first minimum in combination order
    best = min(rows, key=lambda row: row.loss)
    logger.info(f"layer {index}: best drop {best.dropped} (loss {best.loss:.6g})", extra={"layer": index})
    return LayerDropTable(layer=index, rows=rows, best=best.dropped, best_loss=best.loss)


def enumerate_drop(
    m: MoEModel,
    drop_count: int,
    calib: Union[CalibrationBatch, Sequence[CalibrationBatch], np.ndarray],
    threads: Optional[int] = None,
    top_k_policy: TopKPolicy = TopKPolicy.PRESERVE,
) -> DropEnumeration:
    """
    For every layer, try every set of drop_count experts and record the layer's output
    MSE after removing them (no merging).

    Layers are scored independently on the original model's input to that layer.
    """
    check_enumeration_guard(m, drop_count)
    inputs = layer_inputs(m, _tokens(calib))
    work = partial(_enumerate_layer, m=m, inputs=inputs, drop_count=drop_count, top_k_policy=top_k_policy)
    with ThreadPoolExecutor(max_workers=threads or config.THREADS) as executor:
        tables = list(executor.map(work, range(m.n_layers)))
    return DropEnumeration(drop_count=drop_count, layers=tables)


def apply_drops(m: MoEModel, result: DropEnumeration, top_k_policy: TopKPolicy = TopKPolicy.PRESERVE) -> MoEModel:
    """Prune every layer with its best drop set"""
    return drop_model(m, result.best_sets, top_k_policy=top_k_policy)


def write_enumeration(result: DropEnumeration, out_dir: Union[str, Path]) -> None:
    """enum_layer{l}.csv per layer plus enum.json with the per-layer winners"""
    out_dir = ensure_dir(out_dir)
    for table in result.layers:
        write_rows_csv(
            ["dropped", "loss"],
            ([" ".join(str(i) for i in row.dropped), repr(row.loss)] for row in table.rows),
            out_dir / f"enum_layer{table.layer}.csv",
        )
    save_json(
        {
            "drop_count": result.drop_count,
            "best": [{"layer": t.layer, "dropped": t.best, "loss": t.best_loss} for t in result.layers],
        },
        out_dir / "enum.json",
    )
