"""
Pytest fixtures and configuration.
"""

import json
import os
import sys
from pathlib import Path

import numpy as np
import pytest

# Add project root to path
PROJECT_ROOT = Path(__file__).parent.parent
sys.path.insert(0, str(PROJECT_ROOT))

PLANNING_A = 0.5 * np.array([[1.0, -1.0], [2.0, 1.0]])


def _reset_settings_state():
    """Drop the settings singleton so the next access re-reads the environment."""
    import src.config.settings as settings_module
    settings_module._settings = None


@pytest.fixture(autouse=True)
def fresh_settings(monkeypatch):
    """Default settings for every test, independent of the developer's environment."""
    for key in list(os.environ):
        if key.startswith("OTPROP_"):
            monkeypatch.delenv(key, raising=False)
    _reset_settings_state()
    yield
    _reset_settings_state()


@pytest.fixture
def rng():
    """Seeded generator."""
    return np.random.default_rng(0)


@pytest.fixture
def planning_system():
    """The two-state example system, prestabilised with the LQR gain."""
    from src.models.system import LTISystem
    from src.services.systems import prestabilize
    return prestabilize(LTISystem(PLANNING_A, np.eye(2), 0.1 * np.eye(2)))


@pytest.fixture
def planning_samples():
    """Five standard normal noise trajectories of length 10 in R^2."""
    return np.random.default_rng(0).standard_normal((5, 10, 2))


@pytest.fixture
def box_target():
    """Target box [1, 2] x [1, 2]."""
    from src.models.planning import PolyhedralTarget
    return PolyhedralTarget.box([1.0, 1.0], [2.0, 2.0])


@pytest.fixture
def scenario_dir(tmp_path):
    """Temporary directory for scenario files."""
    path = tmp_path / "scenarios"
    path.mkdir()
    return path


@pytest.fixture
def write_scenario(scenario_dir):
    """Write a scenario dict (or raw text) to a JSON file and return its path."""
    def _write(name, data):
        path = scenario_dir / name
        if isinstance(data, str):
            path.write_text(data, encoding="utf-8")
        else:
            path.write_text(json.dumps(data), encoding="utf-8")
        return path
    return _write
