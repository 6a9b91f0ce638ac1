"""
Library and CLI settings.
Loads configuration from environment variables and .env file.
"""

import os
from pathlib import Path
from dataclasses import dataclass, field
from typing import Optional, Tuple, List
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def _env_float(name: str, default: float) -> float:
    return float(os.getenv(name, str(default)))


def _env_int(name: str, default: int) -> int:
    return int(os.getenv(name, str(default)))


def _env_bool(name: str, default: bool) -> bool:
    return os.getenv(name, str(default)).lower() == "true"


@dataclass
class Settings:
    """Numerical tolerances, budgets and output configuration."""

    # Measures
    atom_budget: int = field(
        default_factory=lambda: _env_int("OTPROP_ATOM_BUDGET", 1_000_000)
    )
    weight_tolerance: float = field(
        default_factory=lambda: _env_float("OTPROP_WEIGHT_TOL", 1e-9)
    )

    # Linear algebra
    pinv_rtol: float = field(
        default_factory=lambda: _env_float("OTPROP_PINV_RTOL", 1e-12)
    )
    rank_rtol: float = field(
        default_factory=lambda: _env_float("OTPROP_RANK_RTOL", 1e-10)
    )

    # Transport LP
    lp_residual_tolerance: float = field(
        default_factory=lambda: _env_float("OTPROP_LP_RESIDUAL_TOL", 1e-8)
    )

    # Dual search of the DR-CVaR machinery
    lambda_min: float = field(
        default_factory=lambda: _env_float("OTPROP_LAMBDA_MIN", 1e-6)
    )
    lambda_max: float = field(
        default_factory=lambda: _env_float("OTPROP_LAMBDA_MAX", 1e6)
    )
    lambda_grid_points: int = field(
        default_factory=lambda: _env_int("OTPROP_LAMBDA_GRID", 25)
    )
    certificate_tolerance: float = 1e-6

    # Logging
    log_level: str = field(
        default_factory=lambda: os.getenv("OTPROP_LOG_LEVEL", "INFO")
    )
    log_to_file: bool = field(
        default_factory=lambda: _env_bool("OTPROP_LOG_TO_FILE", False)
    )
    log_structured: bool = field(
        default_factory=lambda: _env_bool("OTPROP_LOG_JSON", False)
    )
    log_dir: Path = field(
        default_factory=lambda: Path(os.getenv("OTPROP_LOG_DIR", "./logs"))
    )

    # Outputs
    output_dir: Path = field(
        default_factory=lambda: Path(os.getenv("OTPROP_OUTPUT_DIR", "./results"))
    )

    @property
    def lambda_bracket(self) -> Tuple[float, float]:
        """Search bracket for the dual multiplier."""
        return self.lambda_min, self.lambda_max

    def validate(self) -> Tuple[bool, List[str]]:
        """Validate settings are numerically sensible."""
        errors = []

        if self.atom_budget < 1:
            errors.append(f"OTPROP_ATOM_BUDGET must be positive, got {self.atom_budget}")
        if not 0 < self.weight_tolerance < 1e-3:
            errors.append(f"OTPROP_WEIGHT_TOL out of range: {self.weight_tolerance}")
        if self.pinv_rtol <= 0 or self.rank_rtol <= 0:
            errors.append("Pseudo-inverse and rank tolerances must be positive")
        if not 0 < self.lambda_min < self.lambda_max:
            errors.append(
                f"Invalid lambda bracket [{self.lambda_min}, {self.lambda_max}]"
            )
        if self.lambda_grid_points < 3:
            errors.append("OTPROP_LAMBDA_GRID must be at least 3")
        if self.log_level.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors.append(f"Invalid log level: {self.log_level}")

        return len(errors) == 0, errors


# Singleton instance
_settings: Optional[Settings] = None


def get_settings() -> Settings:
    """Get the settings singleton."""
    global _settings
    if _settings is None:
        _settings = Settings()
    return _settings


def reset_settings() -> None:
    """Drop the cached settings so the environment is re-read."""
    global _settings
    _settings = None
