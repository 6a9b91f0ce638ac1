"""Utility modules for otprop."""

from .validators import Validators, validate_overrides
from .helpers import scenario_hash, format_value, write_json, write_csv, safe_filename

__all__ = [
    "Validators",
    "validate_overrides",
    "scenario_hash",
    "format_value",
    "write_json",
    "write_csv",
    "safe_filename",
]
