"""
Input validation utilities for scenario files.
Every check returns (is_valid, error_message) and leaves raising to callers.
"""

from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np

SCENARIO_KINDS = ("discrepancy", "propagate", "plan", "consensus", "ols", "demo")
UNCERTAINTY_TYPES = ("initial", "additive", "multiplicative")


class Validators:
    """Collection of scenario validation functions."""

    @staticmethod
    def validate_file_path(file_path: str, expected_extension: str = ".json") -> Tuple[bool, str]:
        """
        Validate a file path.

        Args:
            file_path: Path to validate
            expected_extension: Expected file extension

        Returns:
            Tuple of (is_valid, error_message)
        """
        if not file_path:
            return False, "File path is required"

        path = Path(file_path)

        if not path.exists():
            return False, f"File does not exist: {file_path}"

        if not path.is_file():
            return False, f"Path is not a file: {file_path}"

        if expected_extension and path.suffix.lower() != expected_extension.lower():
            return False, f"File must be a {expected_extension} file"

        return True, ""

    @staticmethod
    def validate_positive_integer(value: Any, name: str = "Value") -> Tuple[bool, str]:
        """
        Validate that a value is a positive integer.

        Args:
            value: Value to validate
            name: Name for error message

        Returns:
            Tuple of (is_valid, error_message)
        """
        if isinstance(value, bool):
            return False, f"{name} must be a valid integer"
        try:
            int_val = int(value)
        except (TypeError, ValueError):
            return False, f"{name} must be a valid integer"
        if int_val != value:
            return False, f"{name} must be an integer"
        if int_val <= 0:
            return False, f"{name} must be a positive integer"
        return True, ""

    @staticmethod
    def validate_nonnegative(value: Any, name: str = "Value") -> Tuple[bool, str]:
        """Validate a finite nonnegative scalar."""
        try:
            val = float(value)
        except (TypeError, ValueError):
            return False, f"{name} must be a number"
        if not np.isfinite(val) or val < 0:
            return False, f"{name} must be finite and nonnegative"
        return True, ""

    @staticmethod
    def validate_gamma(value: Any) -> Tuple[bool, str]:
        """Validate a CVaR tail probability in (0, 1]."""
        try:
            gamma = float(value)
        except (TypeError, ValueError):
            return False, "gamma must be a number"
        if not 0.0 < gamma <= 1.0:
            return False, "gamma must lie in (0, 1]"
        return True, ""

    @staticmethod
    def validate_matrix(value: Any, name: str = "matrix", rows: Optional[int] = None,
                        cols: Optional[int] = None) -> Tuple[bool, str]:
        """
        Validate a nested list as a finite numeric matrix.

        Args:
            value: Candidate matrix (scalars and flat lists are accepted)
            name: Name for error message
            rows, cols: Required shape, if any

        Returns:
            Tuple of (is_valid, error_message)
        """
        if value is None:
            return False, f"{name} is required"
        try:
            arr = np.array(value, dtype=np.float64)
        except (TypeError, ValueError):
            return False, f"{name} must be a rectangular numeric array"
        if arr.ndim > 2:
            return False, f"{name} must be at most two-dimensional"
        if arr.size == 0:
            return False, f"{name} must not be empty"
        if not np.all(np.isfinite(arr)):
            return False, f"{name} contains non-finite entries"
        arr = np.atleast_2d(arr)
        if rows is not None and arr.shape[0] != rows:
            return False, f"{name} must have {rows} rows"
        if cols is not None and arr.shape[1] != cols:
            return False, f"{name} must have {cols} columns"
        return True, ""

    @staticmethod
    def validate_distribution(data: Any, name: str = "distribution") -> Tuple[bool, str]:
        """Validate {"dim", "atoms", "weights"} JSON (weights optional)."""
        if not isinstance(data, dict):
            return False, f"{name} must be an object"
        ok, msg = Validators.validate_matrix(data.get("atoms"), f"{name}.atoms")
        if not ok:
            return ok, msg
        if data.get("weights") is not None:
            ok, msg = Validators.validate_matrix(data["weights"], f"{name}.weights")
            if not ok:
                return ok, msg
        if data.get("dim") is not None:
            return Validators.validate_positive_integer(data["dim"], f"{name}.dim")
        return True, ""

    @staticmethod
    def validate_ambiguity_set(data: Any, name: str = "set") -> Tuple[bool, str]:
        """Validate {"center", "radius", "cost"?, "exact"?} JSON."""
        if not isinstance(data, dict):
            return False, f"{name} must be an object"
        ok, msg = Validators.validate_distribution(data.get("center"), f"{name}.center")
        if not ok:
            return ok, msg
        if "radius" not in data:
            return False, f"{name}.radius is required"
        return Validators.validate_nonnegative(data["radius"], f"{name}.radius")

    @staticmethod
    def validate_system(data: Any) -> Tuple[bool, str]:
        """Validate {"A", "B", "D"?} with consistent row counts."""
        if not isinstance(data, dict):
            return False, "system must be an object"
        ok, msg = Validators.validate_matrix(data.get("A"), "system.A")
        if not ok:
            return ok, msg
        n = np.atleast_2d(np.array(data["A"], dtype=np.float64)).shape[0]
        ok, msg = Validators.validate_matrix(data["A"], "system.A", n, n)
        if not ok:
            return ok, msg
        for key in ("B", "D"):
            if key == "D" and data.get("D") is None:
                continue
            ok, msg = Validators.validate_matrix(data.get(key), f"system.{key}")
            if not ok:
                return ok, msg
        return True, ""

    @staticmethod
    def validate_scenario(data: Any) -> Tuple[bool, str]:
        """
        Check the kind-specific required fields of a scenario.

        Returns:
            Tuple of (is_valid, error_message)
        """
        if not isinstance(data, dict):
            return False, "Scenario must be a JSON object"
        kind = data.get("kind")
        if kind not in SCENARIO_KINDS:
            return False, f"Unknown scenario kind {kind!r}; expected one of {', '.join(SCENARIO_KINDS)}"

        checks = []
        if kind == "discrepancy":
            checks += [
                Validators.validate_distribution(data.get("P"), "P"),
                Validators.validate_distribution(data.get("Q"), "Q"),
            ]
        elif kind == "propagate":
            checks.append(Validators.validate_system(data.get("system")))
            checks.append(Validators.validate_positive_integer(data.get("horizon"), "horizon"))
            unc = data.get("uncertainty")
            if not isinstance(unc, dict) or unc.get("type") not in UNCERTAINTY_TYPES:
                checks.append((False, f"uncertainty.type must be one of {', '.join(UNCERTAINTY_TYPES)}"))
            elif unc["type"] == "additive" and "samples" not in unc and "seed" not in data:
                checks.append((False, "seed is required when noise samples are generated"))
        elif kind == "plan":
            checks.append(Validators.validate_system(data.get("system")))
            checks.append(Validators.validate_positive_integer(data.get("horizon"), "horizon"))
            checks.append(Validators.validate_gamma(data.get("gamma")))
            if not isinstance(data.get("target"), dict):
                checks.append((False, "target is required"))
            if "eps" not in data:
                checks.append((False, "eps is required"))
            if "samples" not in data and "seed" not in data:
                checks.append((False, "seed is required when noise samples are generated"))
        elif kind == "consensus":
            checks.append(Validators.validate_matrix(data.get("A"), "A"))
            checks.append(Validators.validate_ambiguity_set(data.get("set"), "set"))
        elif kind == "ols":
            checks.append(Validators.validate_matrix(data.get("A"), "A"))
            checks.append(Validators.validate_ambiguity_set(data.get("noise"), "noise"))

        for ok, msg in checks:
            if not ok:
                return ok, msg
        return True, ""


def validate_overrides(overrides: Dict[str, Any]) -> Tuple[bool, str]:
    """Validate CLI flag overrides before they are merged into a scenario."""
    if overrides.get("gamma") is not None:
        ok, msg = Validators.validate_gamma(overrides["gamma"])
        if not ok:
            return ok, msg
    if overrides.get("eps") is not None:
        ok, msg = Validators.validate_nonnegative(overrides["eps"], "eps")
        if not ok:
            return ok, msg
    for key in ("horizon", "atom_budget"):
        if overrides.get(key) is not None:
            ok, msg = Validators.validate_positive_integer(overrides[key], key)
            if not ok:
                return ok, msg
    return True, ""
