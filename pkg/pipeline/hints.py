# pipeline/hints.py - Expert visiting frequencies on calibration data
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

import config
from core.counter import VisitCounter
from core.moe import MoEModel, model_forward
from core.utils import write_rows_csv
from modelio.calibration import CalibrationBatch

logger = logging.getLogger(__name__)


@dataclass
class HintStats:
    """Per-layer visit counters for a model and optionally its pruned version"""
    before: VisitCounter
    after: Optional[VisitCounter] = None

    def shares(self, which: str = "before") -> List[np.ndarray]:
        counter = self.before if which == "before" else self.after
        if counter is None:
            return []
        return [counter.shares(l) for l in range(counter.n_layers)]


def count_visits(m: MoEModel, calib: Union[CalibrationBatch, Sequence[CalibrationBatch]]) -> VisitCounter:
    """Run every batch through the model, one private counter per batch, summed"""
    batches = [calib] if isinstance(calib, CalibrationBatch) else list(calib)
    total = VisitCounter.for_model(m)
    for batch in batches:
        counter = VisitCounter.for_model(m)
        model_forward(m, batch.embeddings, counter=counter)
        total = total + counter
    return total


def hint_stats(
    m: MoEModel,
    calib: Union[CalibrationBatch, Sequence[CalibrationBatch]],
    pruned: Optional[MoEModel] = None,
) -> HintStats:
    """Visit shares per expert (counts / (tokens x K)) before and, if given, after pruning"""
    stats = HintStats(before=count_visits(m, calib))
    if pruned is not None:
        stats.after = count_visits(pruned, calib)
    return stats


def write_hints_csv(stats: HintStats, path: Union[str, Path], digits: Optional[int] = None) -> None:
    digits = config.CSV_DIGITS if digits is None else digits
    rows = []
    for which, counter in (("before", stats.before), ("after", stats.after)):
        if counter is None:
            continue
        for layer in range(counter.n_layers):
            shares = counter.shares(layer)
            for expert, (visits, share) in enumerate(zip(counter.counts[layer], shares)):
                rows.append([which, layer, expert, int(visits), f"{share:.{digits}g}"])
    write_rows_csv(["model", "layer", "expert", "visits", "share"], rows, path)
    logger.info(f"Wrote {len(rows)} visit-share rows to {path}")
