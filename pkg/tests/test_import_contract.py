#!filepath: tests/test_import_contract.py
from __future__ import annotations

import importlib
from dataclasses import dataclass
from typing import Iterable


@dataclass(frozen=True, slots=True)
class ImportContract:
    """Import targets that must remain stable.

    Args:
        targets: Import strings to validate.
    """

    targets: tuple[str, ...]


def _contract() -> ImportContract:
    return ImportContract(
        targets=(
            "weakfbsde_app",
            "weakfbsde_app.errors",
            "weakfbsde_app.settings",
            "weakfbsde_app.records",
            "weakfbsde_app.reporting",
            "weakfbsde_app.problem.catalog",
            "weakfbsde_app.problem.transforms",
            "weakfbsde_app.pde.quasilinear",
            "weakfbsde_app.pde.hjb",
            "weakfbsde_app.simulate.euler",
            "weakfbsde_app.simulate.timechange",
            "weakfbsde_app.mgcheck.checks",
            "weakfbsde_app.mgcheck.nodal",
            "weakfbsde_app.control.experiments",
            "weakfbsde_app.cli",
        )
    )


def _import_all(targets: Iterable[str]) -> None:
    """Import all targets.

    Raises:
        ImportError: If any import fails.
    """
    for t in targets:
        importlib.import_module(t)


def test_import_contract() -> None:
    _import_all(_contract().targets)
