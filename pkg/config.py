"""
Configuration module for the moe-shear expert pruning toolkit.
Loads settings from environment variables with fallback to default values.
"""
import os
import sys
import json
import logging
from pathlib import Path
from typing import Optional
from dotenv import load_dotenv
from colorama import Fore, Style

# Load environment variables from .env file
load_dotenv()

# Helper functions for parsing environment variables
def _parse_bool(value: Optional[str], default: bool = False) -> bool:
    """Parse string to boolean."""
    if value is None:
        return default
    lowered = value.strip().lower()
    if lowered in ("1", "true", "yes", "y", "on"):
        return True
    if lowered in ("0", "false", "no", "n", "off"):
        return False
    return default

def _parse_int(value: Optional[str], default: int) -> int:
    """Parse string to integer with default."""
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        return default

def _parse_float(value: Optional[str], default: float) -> float:
    """Parse string to float with default."""
    if value is None:
        return default
    try:
        return float(value)
    except ValueError:
        return default

# Base directories
BASE_DIR = Path(__file__).resolve().parent
OUTPUT_DIR = Path(os.getenv("MOESHEAR_OUTPUT_DIR", str(BASE_DIR / "runs"))).resolve()

# Reproducibility and parallelism
DEFAULT_SEED = _parse_int(os.getenv("MOESHEAR_SEED"), 0)
THREADS = max(1, _parse_int(os.getenv("MOESHEAR_THREADS"), 1))
SHOW_PROGRESS = _parse_bool(os.getenv("MOESHEAR_SHOW_PROGRESS"), True)

# Calibration data
CALIB_SAMPLES = _parse_int(os.getenv("MOESHEAR_CALIB_SAMPLES"), 128)  # rows used for discovery/learning
EVAL_SAMPLES = _parse_int(os.getenv("MOESHEAR_EVAL_SAMPLES"), 64)     # held-out rows for evaluation

# Learned merge coefficients
LEARN_LR = _parse_float(os.getenv("MOESHEAR_LEARN_LR"), 1e-3)
LEARN_EPOCHS = _parse_int(os.getenv("MOESHEAR_LEARN_EPOCHS"), 50)
LEARN_BATCH = _parse_int(os.getenv("MOESHEAR_LEARN_BATCH"), 16)
LEARN_TRAIN_FRACTION = _parse_float(os.getenv("MOESHEAR_LEARN_TRAIN_FRACTION"), 0.75)  # 3:1 split
FD_STEP = _parse_float(os.getenv("MOESHEAR_FD_STEP"), 1e-4)

# Similarity and grouping
RBF_BANDWIDTH = _parse_float(os.getenv("MOESHEAR_RBF_BANDWIDTH"), 1.0)
KMEANS_RESTARTS = _parse_int(os.getenv("MOESHEAR_KMEANS_RESTARTS"), 50)
KMEANS_MAX_ITER = _parse_int(os.getenv("MOESHEAR_KMEANS_MAX_ITER"), 100)
BRUTE_FORCE_MAX_N = _parse_int(os.getenv("MOESHEAR_BRUTE_FORCE_MAX_N"), 12)
ENUM_MAX_COMBINATIONS = _parse_int(os.getenv("MOESHEAR_ENUM_MAX_COMBINATIONS"), 10_000)

# Output formatting
CSV_DIGITS = _parse_int(os.getenv("MOESHEAR_CSV_DIGITS"), 9)

# Logging
LOG_LEVEL = os.getenv("MOESHEAR_LOG_LEVEL", "INFO")
LOG_FORMAT = os.getenv("MOESHEAR_LOG_FORMAT", "plain")
PLAIN_FORMAT = '%(asctime)s - %(name)s - %(levelname)s - %(message)s'

_LEVEL_COLORS = {
    "DEBUG": Fore.CYAN,
    "INFO": Fore.GREEN,
    "WARNING": Fore.YELLOW,
    "ERROR": Fore.RED,
    "CRITICAL": Fore.MAGENTA,
}

class JsonLogFormatter(logging.Formatter):
    """One JSON object per log line"""

    def format(self, record: logging.LogRecord) -> str:
        payload = {
            "time": self.formatTime(record),
            "level": record.levelname,
            "logger": record.name,
            "message": record.getMessage(),
        }
        layer = getattr(record, "layer", None)
        if layer is not None:
            payload["layer"] = layer
        if record.exc_info:
            payload["exc_info"] = self.formatException(record.exc_info)
        return json.dumps(payload, sort_keys=True)

class ColorLogFormatter(logging.Formatter):
    """Plain format with the level name coloured for terminals"""

    def format(self, record: logging.LogRecord) -> str:
        line = super().format(record)
        color = _LEVEL_COLORS.get(record.levelname)
        if color is None:
            return line
        return line.replace(record.levelname, f"{color}{record.levelname}{Style.RESET_ALL}", 1)

def configure_logging(log_format: Optional[str] = None, level: Optional[str] = None) -> None:
    """(Re)install the root handler for the requested format ("plain" or "json")."""
    log_format = (log_format or LOG_FORMAT).lower()
    level = (level or LOG_LEVEL).upper()

    handler = logging.StreamHandler(sys.stderr)
    if log_format == "json":
        handler.setFormatter(JsonLogFormatter())
    elif sys.stderr.isatty():
        handler.setFormatter(ColorLogFormatter(PLAIN_FORMAT))
    else:
        handler.setFormatter(logging.Formatter(PLAIN_FORMAT))

    logging.basicConfig(level=getattr(logging, level, logging.INFO), handlers=[handler], force=True)

# Setup logging
configure_logging()
