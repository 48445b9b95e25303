#!filepath: tests/test_settings_load.py
from __future__ import annotations

from pathlib import Path

import pytest

from weakfbsde_app.pde.quasilinear import PicardOptions
from weakfbsde_app.settings import (
    OUTPUT_DIR_ENV,
    AppConfig,
    ExperimentConfig,
    SettingsError,
    get_settings,
    load_app_config,
    reload_settings,
)
from weakfbsde_app.utils.project_paths import ProjectPaths


def _write(p: Path, text: str) -> Path:
    p.write_text(text, encoding="utf-8")
    return p


def test_load_app_config_smoke() -> None:
    cfg = load_app_config(ProjectPaths.discover())
    assert isinstance(cfg, AppConfig)
    assert cfg.simulation.seed == 0
    assert cfg.grid.build().dim == 1
    assert isinstance(cfg.picard.options(), PicardOptions)
    assert cfg.control.levels == [1, 2, 4, 8, 16]


def test_overlay_merges_deeply(tmp_path: Path) -> None:
    overlay = _write(tmp_path / "over.yaml", "grid:\n  n_t: 10\nchecks:\n  threshold: 4.0\n")
    cfg = load_app_config(ProjectPaths.discover(), overlay=overlay)
    assert cfg.grid.n_t == 10
    assert cfg.grid.n_x == 401
    assert cfg.checks.threshold == 4.0


def test_json_overlay_is_accepted(tmp_path: Path) -> None:
    overlay = _write(tmp_path / "over.json", '{"simulation": {"paths": 77}}')
    assert load_app_config(ProjectPaths.discover(), overlay=overlay).simulation.paths == 77


def test_missing_overlay_raises(tmp_path: Path) -> None:
    with pytest.raises(SettingsError):
        load_app_config(ProjectPaths.discover(), overlay=tmp_path / "absent.yaml")


def test_invalid_value_raises(tmp_path: Path) -> None:
    overlay = _write(tmp_path / "bad.yaml", "grid:\n  n_x: 2\n")
    with pytest.raises(SettingsError):
        load_app_config(ProjectPaths.discover(), overlay=overlay)


def test_output_dir_from_environment(monkeypatch: pytest.MonkeyPatch, tmp_path: Path) -> None:
    monkeypatch.setenv(OUTPUT_DIR_ENV, str(tmp_path))
    assert load_app_config(ProjectPaths.discover()).paths.output_dir == str(tmp_path)


def test_app_env_profile_is_applied(monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("APP_ENV", "development")
    cfg = load_app_config(ProjectPaths.discover())
    assert cfg.app_env == "development"
    assert cfg.grid.n_t == 50


def test_experiment_config_requires_seed(tmp_path: Path) -> None:
    app = AppConfig()
    assert app.simulation.seed is None
    with pytest.raises(SettingsError):
        ExperimentConfig.from_app(app, "heat-x2", tmp_path)
    exp = ExperimentConfig.from_app(app, "heat-x2", tmp_path, simulation={"seed": 3, "paths": None})
    assert exp.simulation.seed == 3
    assert exp.simulation.paths == app.simulation.paths
    assert exp.output_dir == tmp_path / "data/runs"


def test_experiment_config_rejects_unknown_problem(tmp_path: Path) -> None:
    app = load_app_config(ProjectPaths.discover())
    with pytest.raises(SettingsError, match="unknown problem"):
        ExperimentConfig.from_app(app, "no-such-problem", tmp_path)


def test_problem_params_come_from_config(tmp_path: Path) -> None:
    app = load_app_config(ProjectPaths.discover())
    exp = ExperimentConfig.from_app(app, "barlow", tmp_path)
    assert exp.params == {"lam": 0.75}


def test_settings_are_cached_until_reloaded() -> None:
    first = get_settings()
    assert get_settings() is first
    fresh = reload_settings()
    assert fresh is not first
    assert fresh.app == first.app
    assert fresh.paths.configs_dir == ProjectPaths.discover().configs_dir
