"""
Pytest Configuration and Fixtures

Shared fixtures for the sinkwalk test suite.
"""

import os
import sys
from pathlib import Path

import pytest

sys.path.append(str(Path(__file__).parent.parent))

# Settings objects created at import time must already see the testing environment
os.environ.setdefault("SINKWALK_ENVIRONMENT", "testing")
os.environ.setdefault("SINKWALK_ENABLE_CACHE", "false")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long statistical or long-horizon checks (deselect with -m 'not slow')")


@pytest.fixture(autouse=True)
def set_test_environment(monkeypatch, tmp_path):
    """
    Automatically set test environment for all tests

    Args:
        monkeypatch: Pytest monkeypatch fixture
        tmp_path: Per-test temporary directory used for outputs
    """
    monkeypatch.setenv("SINKWALK_ENVIRONMENT", "testing")
    monkeypatch.setenv("SINKWALK_ENABLE_CACHE", "false")
    monkeypatch.setenv("SINKWALK_OUTPUT_DIR", str(tmp_path / "results"))
    monkeypatch.setenv("SINKWALK_CACHE_DIR", str(tmp_path / "cache"))


@pytest.fixture
def hadamard():
    from sinkwalk.walk_core import hadamard_coin
    return hadamard_coin()


@pytest.fixture
def right():
    from sinkwalk.walk_core import InitialSpec
    return InitialSpec.right()
