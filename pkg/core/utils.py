# core/utils.py - Utility functions
import csv
import json
import logging
from pathlib import Path
from typing import Any, Iterable, List, Sequence, Union

import numpy as np

from core.exceptions import DataError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

FLOAT32_BYTES = 4
BFLOAT16_BYTES = 2


def ensure_dir(path: PathLike) -> Path:
    """Create a directory (and parents) if missing"""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path


def to_jsonable(data: Any) -> Any:
    """Convert numpy scalars/arrays and sets into plain JSON values"""
    if isinstance(data, dict):
        return {str(k): to_jsonable(v) for k, v in data.items()}
    if isinstance(data, (list, tuple)):
        return [to_jsonable(v) for v in data]
    if isinstance(data, (set, frozenset)):
        return sorted(to_jsonable(v) for v in data)
    if isinstance(data, np.ndarray):
        return data.tolist()
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, np.floating):
        return float(data)
    return data


def save_json(data: Any, filepath: PathLike) -> None:
    """Save data to a JSON file with sorted keys so identical data gives identical bytes"""
    path = Path(filepath)
    if path.parent != Path("."):
        ensure_dir(path.parent)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(to_jsonable(data), f, ensure_ascii=False, indent=2, sort_keys=True)
        f.write("\n")


def load_json(filepath: PathLike) -> Any:
    """Load data from a JSON file"""
    try:
        with open(filepath, "r", encoding="utf-8") as f:
            return json.load(f)
    except FileNotFoundError:
        raise DataError(f"file not found: {filepath}")
    except json.JSONDecodeError as e:
        raise DataError(f"invalid JSON in {filepath}: {e}")


def format_float(value: float, digits: int) -> str:
    """Fixed significant-digit rendering used in every CSV we write"""
    return f"{float(value):.{digits}g}"


def write_matrix_csv(matrix: np.ndarray, filepath: PathLike, digits: int) -> None:
    """Write a 2-D float matrix as CSV, one row per line, no header"""
    matrix = np.asarray(matrix)
    path = Path(filepath)
    if path.parent != Path("."):
        ensure_dir(path.parent)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        for row in matrix:
            writer.writerow([format_float(v, digits) for v in row])


def read_matrix_csv(filepath: PathLike) -> np.ndarray:
    """Read a headerless float CSV written by write_matrix_csv"""
    try:
        with open(filepath, "r", encoding="utf-8", newline="") as f:
            rows = [row for row in csv.reader(f) if row]
    except FileNotFoundError:
        raise DataError(f"file not found: {filepath}")
    try:
        values = [[float(v) for v in row] for row in rows]
    except ValueError as e:
        raise DataError(f"non-numeric entry in {filepath}: {e}")
    if not values or any(len(row) != len(values[0]) for row in values):
        raise DataError(f"{filepath} is empty or ragged")
    return np.asarray(values, dtype=np.float64)


def write_rows_csv(header: Sequence[str], rows: Iterable[Sequence[Any]], filepath: PathLike) -> None:
    """Write a table with a header line"""
    path = Path(filepath)
    if path.parent != Path("."):
        ensure_dir(path.parent)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(list(header))
        for row in rows:
            writer.writerow(list(row))


def payload_bytes(n_params: int) -> dict:
    """Bytes needed to store n_params weights at float32 and bfloat16 width"""
    return {"fp32": int(n_params) * FLOAT32_BYTES, "bf16": int(n_params) * BFLOAT16_BYTES}
