"""Configuration module for otprop."""

from .settings import Settings, get_settings, reset_settings
from .logging_config import setup_logging, get_logger

__all__ = ["Settings", "get_settings", "reset_settings", "setup_logging", "get_logger"]
