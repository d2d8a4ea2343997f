"""
Helper utility functions for the EDCA analysis toolkit
"""

import logging
import math
import os
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import pandas as pd

from app.core.errors import ConfigError

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = "%.6g"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


def setup_logging(level: Optional[str] = None):
    """
    Configure root logging once for command-line use

    Args:
        level: Level name; falls back to $LOG_LEVEL and then INFO
    """
    name = (level or os.getenv("LOG_LEVEL") or "INFO").upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        numeric = logging.INFO
    logging.basicConfig(level=numeric, format=LOG_FORMAT)


def axis_values(start: Optional[float] = None, stop: Optional[float] = None,
                steps: Optional[int] = None, log_spaced: bool = False,
                values: Optional[Sequence[float]] = None) -> np.ndarray:
    """
    Sweep axis from explicit values or from a start/stop/steps range

    Args:
        start: First value
        stop: Last value (inclusive)
        steps: Number of points
        log_spaced: Space points geometrically instead of linearly
        values: Explicit values; take precedence over the range

    Returns:
        np.ndarray: Axis values in sweep order

    Raises:
        ConfigError: Empty, non-finite or non-positive (for log spacing) ranges
    """
    if values is not None:
        axis = np.asarray(list(values), dtype=float)
    else:
        if start is None or stop is None or steps is None:
            raise ConfigError("a sweep needs --values or --from, --to and --steps")
        if steps < 1:
            raise ConfigError(f"--steps must be at least 1, got {steps}", key="steps")
        if log_spaced:
            if start <= 0 or stop <= 0:
                raise ConfigError("log-spaced ranges need positive bounds", key="from")
            axis = np.geomspace(start, stop, steps)
        else:
            axis = np.linspace(start, stop, steps)
    if axis.size == 0:
        raise ConfigError("sweep axis is empty")
    if not np.all(np.isfinite(axis)):
        raise ConfigError("sweep axis contains non-finite values")
    return axis


def write_csv(frame: pd.DataFrame, path: Path) -> Path:
    """Write a result table with a header row and six significant digits"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT)
    logger.info(f"Wrote {len(frame)} rows to {path}")
    return path


def format_ms(seconds: float) -> str:
    """Seconds as milliseconds with six significant digits"""
    if seconds is None or math.isnan(seconds):
        return "nan"
    return f"{seconds * 1e3:.6g} ms"


def format_probability(value: float) -> str:
    return f"{value:.6g}"
