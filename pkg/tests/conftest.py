#!filepath: tests/conftest.py
from __future__ import annotations

import sys
from pathlib import Path

import pytest


def pytest_configure() -> None:
    root = Path(__file__).resolve().parents[1]
    src = (root / "src").resolve()
    if str(src) not in sys.path:
        sys.path.insert(0, str(src))


@pytest.fixture()
def small_grid():
    from weakfbsde_app.pde.grid import TimeSpaceGrid

    return TimeSpaceGrid.uniform(1.0, n_t=20, n_x=41, lo=-4.0, hi=4.0)
