"""
Helper utility functions for result files.
"""

import hashlib
import json
import math
import re
from pathlib import Path
from typing import Any, Union

import numpy as np
import pandas as pd


def to_jsonable(value: Any) -> Any:
    """
    Convert numpy values and non-finite floats into plain JSON values.

    NaN and infinities become None.
    """
    if isinstance(value, dict):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return to_jsonable(value.tolist())
    if isinstance(value, (np.bool_, bool)):
        return bool(value)
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    return value


def canonical_json(data: Any) -> str:
    """Key-sorted compact JSON text."""
    return json.dumps(to_jsonable(data), sort_keys=True, separators=(",", ":"))


def scenario_hash(data: Any) -> str:
    """SHA-256 of the canonical JSON of a scenario."""
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def format_value(value: float, digits: int = 12) -> str:
    """
    Format a scalar to a number of significant digits.

    Args:
        value: Value to format
        digits: Significant digits

    Returns:
        Formatted string
    """
    return f"{float(value):.{digits}g}"


def write_json(data: Any, path: Union[str, Path]) -> Path:
    """Write key-sorted, indented JSON (no timestamps, stable across runs)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(to_jsonable(data), sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return path


def write_csv(frame: pd.DataFrame, path: Union[str, Path]) -> Path:
    """Write a table with its header row; floats use the shortest round-trip form."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def safe_filename(filename: str, max_length: int = 100) -> str:
    """
    Convert a string to a safe filename.

    Args:
        filename: Original filename
        max_length: Maximum length

    Returns:
        Safe filename
    """
    # Remove invalid characters
    safe = re.sub(r'[<>:"/\\|?*]', '', filename)

    # Replace spaces with underscores
    safe = safe.replace(' ', '_')

    # Truncate if necessary
    if len(safe) > max_length:
        safe = safe[:max_length]

    return safe
