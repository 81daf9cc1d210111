"""Shared test fixtures."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

# Add simulator/ to path so the flat modules can be imported
SIMULATOR_DIR = Path(__file__).resolve().parent.parent / "simulator"

sys.path.insert(0, str(SIMULATOR_DIR))

from dd_core import DDGrid  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def grid8() -> DDGrid:
    """M = N = 8, the size used by the oracle checks."""
    return DDGrid(M=8, N=8)


@pytest.fixture
def grid4() -> DDGrid:
    return DDGrid(M=4, N=4)


@pytest.fixture(autouse=True)
def _clean_env(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.delenv("RIS_OTFS_WORKERS", raising=False)
    monkeypatch.delenv("RIS_OTFS_LOG_LEVEL", raising=False)
