#!src/weakfbsde_app/settings.py
from __future__ import annotations

import os
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, List, Literal, Mapping, Optional

from dotenv import load_dotenv
from pydantic import BaseModel, Field, ValidationError, field_validator

from weakfbsde_app.control.spec import HamiltonianSpec, diffusion_control_spec, drift_control_spec
from weakfbsde_app.mgcheck.checks import DEFAULT_ABS_TOL, DEFAULT_THRESHOLD, MIN_PATHS
from weakfbsde_app.pde.grid import TimeSpaceGrid
from weakfbsde_app.pde.hjb import HJBOptions
from weakfbsde_app.pde.quasilinear import PicardOptions
from weakfbsde_app.problem.catalog import problem_ids
from weakfbsde_app.utils.logger import get_logger
from weakfbsde_app.utils.project_paths import ProjectPaths
from weakfbsde_app.utils.serialization import load_config_file

logger = get_logger(__name__)

OUTPUT_DIR_ENV = "WEAKFBSDE_OUTPUT_DIR"


class SettingsError(RuntimeError):
    """Config file missing, unreadable or invalid."""


class PathsConfig(BaseModel):
    output_dir: str = "data/runs"

    model_config = {"extra": "allow"}


class GridConfig(BaseModel):
    """Space-time grid; the same box is used on every axis."""

    T: float = Field(default=1.0, gt=0)
    n_t: int = Field(default=200, ge=1)
    n_x: int = Field(default=401, ge=3)
    lo: float = -4.0
    hi: float = 4.0

    model_config = {"extra": "allow"}

    def build(self, dim: int = 1) -> TimeSpaceGrid:
        return TimeSpaceGrid.uniform(self.T, self.n_t, self.n_x, self.lo, self.hi, dim)


class PicardConfig(BaseModel):
    picard_tol: float = 1e-10
    picard_max: int = 50
    damping: float = 1.0
    theta: float = 1.0
    boundary: Literal["compatible", "cutoff"] = "compatible"

    model_config = {"extra": "allow"}

    def options(self) -> PicardOptions:
        return PicardOptions(
            picard_tol=self.picard_tol,
            picard_max=self.picard_max,
            damping=self.damping,
            theta=self.theta,
            boundary=self.boundary,
        )


class HJBConfig(BaseModel):
    policy_max: int = 30
    policy_tol: float = 1e-8
    value_tol: float = 1e-12

    model_config = {"extra": "allow"}

    def options(self) -> HJBOptions:
        return HJBOptions(policy_max=self.policy_max, policy_tol=self.policy_tol, value_tol=self.value_tol)


class SimulationConfig(BaseModel):
    paths: int = Field(default=10_000, ge=1)
    seed: Optional[int] = None
    dt: float = Field(default=0.01, gt=0)
    x0: float = 0.0

    model_config = {"extra": "allow"}


class ChecksConfig(BaseModel):
    threshold: float = DEFAULT_THRESHOLD
    abs_tol: float = DEFAULT_ABS_TOL
    min_paths: int = MIN_PATHS
    fk_tolerance: float = 1e-8
    moment_p: float = 2.0
    nodal_n: int = 10

    model_config = {"extra": "allow"}


class ControlConfig(BaseModel):
    levels: List[int] = [1, 2, 4, 8, 16]
    drift_steps: int = 256
    depth: int = 20
    lam: float = 0.75
    control_hi: Optional[float] = None
    mc_horizon: float = 0.5
    mc_steps: int = 50
    clock_step: float = 2e-3
    probes: int = 1000
    k: float = 0.5

    model_config = {"extra": "allow"}

    def spec(self, name: str) -> HamiltonianSpec:
        if name == "barlow-diffusion":
            return diffusion_control_spec(self.lam, self.control_hi)
        if name == "drift-k":
            return drift_control_spec(self.k)
        raise SettingsError(f"Unknown control spec {name!r}")


class AppConfig(BaseModel):
    """Full application config after merging profiles and overlays."""

    paths: PathsConfig = PathsConfig()
    grid: GridConfig = GridConfig()
    picard: PicardConfig = PicardConfig()
    hjb: HJBConfig = HJBConfig()
    simulation: SimulationConfig = SimulationConfig()
    checks: ChecksConfig = ChecksConfig()
    control: ControlConfig = ControlConfig()
    problems: Dict[str, Dict[str, Any]] = {}
    app_env: str = "production"

    model_config = {"extra": "allow"}

    def problem_params(self, problem_id: str) -> Dict[str, Any]:
        return dict(self.problems.get(problem_id, {}))


class ExperimentSimulation(SimulationConfig):
    seed: int


class ExperimentConfig(BaseModel):
    """Validated inputs of one CLI run.

    The seed is mandatory; there is no entropy fallback.
    """

    problem: str
    grid: GridConfig = GridConfig()
    picard: PicardConfig = PicardConfig()
    simulation: ExperimentSimulation
    checks: ChecksConfig = ChecksConfig()
    output_dir: Path
    params: Dict[str, Any] = {}

    @field_validator("problem")
    @classmethod
    def _known_problem(cls, value: str) -> str:
        if value not in problem_ids():
            raise ValueError(f"unknown problem {value!r}, known: {', '.join(problem_ids())}")
        return value

    @classmethod
    def from_app(cls, app: AppConfig, problem: str, root: Path, **overrides: Any) -> ExperimentConfig:
        """Combine the app config for one problem with explicit CLI overrides.

        Raises:
            SettingsError: Validation failed, e.g. unknown problem or missing seed.
        """
        sim = app.simulation.model_dump()
        sim.update({k: v for k, v in overrides.pop("simulation", {}).items() if v is not None})
        grid = overrides.pop("grid", None) or app.grid
        out = Path(app.paths.output_dir).expanduser()
        payload = {
            "problem": problem,
            "grid": grid,
            "picard": app.picard,
            "simulation": sim,
            "checks": app.checks,
            "output_dir": out if out.is_absolute() else root / out,
            "params": app.problem_params(problem),
        }
        payload.update(overrides)
        try:
            return cls.model_validate(payload)
        except ValidationError as e:
            raise SettingsError(f"Experiment config invalid: {e}") from e


@dataclass(frozen=True, slots=True)
class Settings:
    app: AppConfig
    paths: ProjectPaths


def load_app_config(paths: Optional[ProjectPaths] = None, overlay: Optional[Path] = None) -> AppConfig:
    """Load default.yaml, the APP_ENV profile and an optional overlay file.

    Args:
        paths: Resolved project paths.
        overlay: YAML or JSON file merged last.

    Returns:
        AppConfig: Validated config.

    Raises:
        SettingsError: A file is missing, unreadable or invalid.
    """
    load_dotenv(override=False)

    resolved = paths or ProjectPaths.discover()
    env_name = str(os.getenv("APP_ENV", "production") or "production").strip()
    default_path = resolved.configs_dir / "default.yaml"
    profile_path = resolved.configs_dir / f"config.{env_name}.yaml"

    merged = _read_mapping(default_path, required=True)
    merged = _deep_merge(merged, _read_mapping(profile_path, required=False))
    if overlay is not None:
        merged = _deep_merge(merged, _read_mapping(overlay, required=True))

    out_dir = str(os.getenv(OUTPUT_DIR_ENV, "") or "").strip()
    if out_dir:
        merged.setdefault("paths", {})["output_dir"] = out_dir
    merged["app_env"] = env_name

    try:
        model = AppConfig.model_validate(merged)
    except ValidationError as e:
        raise SettingsError(f"Config validation failed: {e}") from e

    logger.info(f"Loaded app config, env={env_name}, profile_exists={profile_path.exists()}, overlay={overlay}")
    return model


@lru_cache(maxsize=1)
def get_settings() -> Settings:
    paths = ProjectPaths.discover()
    return Settings(app=load_app_config(paths), paths=paths)


def reload_settings() -> Settings:
    get_settings.cache_clear()
    return get_settings()


def _read_mapping(path: Path, required: bool) -> Dict[str, Any]:
    if not path.exists():
        if required:
            raise SettingsError(f"Missing config file: {path}")
        return {}
    loaded = load_config_file(path)
    if not loaded.ok:
        raise SettingsError(f"Invalid config file: {path}")
    return loaded.data


def _deep_merge(a: Mapping[str, Any], b: Mapping[str, Any]) -> Dict[str, Any]:
    out: Dict[str, Any] = dict(a)
    for k, v in b.items():
        if k in out and isinstance(out[k], dict) and isinstance(v, dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out
