"""
Pytest configuration for the MX simulator test suite.
Sets up Python path and common fixtures.
"""

import sys
from pathlib import Path

# Add the project root to Python path for all tests
project_root = Path(__file__).parent.parent
sys.path.insert(0, str(project_root))

# Load environment variables for tests
from dotenv import load_dotenv
load_dotenv()

import numpy as np
import pytest

from app.core.mx_formats import ALL_FORMATS, FP_FORMATS
from app.core.workload import WorkloadSpec, pusher_workload

GOLDEN_DIR = project_root / "tests" / "fixtures" / "golden"


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN_DIR


@pytest.fixture
def rng() -> np.random.Generator:
    """Seeded generator so every test sees the same data."""
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def pusher():
    return pusher_workload(32)


@pytest.fixture(scope="session")
def tiny_workload() -> WorkloadSpec:
    """Two-layer network small enough for quick training runs."""
    return WorkloadSpec(name="tiny", layers=[(4, 16), (16, 4)], batch=8)


@pytest.fixture(scope="session")
def all_formats():
    return list(ALL_FORMATS)


@pytest.fixture(scope="session")
def fp_formats():
    return list(FP_FORMATS)


@pytest.fixture
def workload_file(tmp_path) -> Path:
    path = tmp_path / "tiny.json"
    path.write_text('{"name": "tiny", "layers": [[4, 16], [16, 4]], "batch": 8}\n', encoding="utf-8")
    return path
