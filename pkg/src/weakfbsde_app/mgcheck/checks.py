#!filepath: src/weakfbsde_app/mgcheck/checks.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import norm

from weakfbsde_app.errors import ConfigurationError, InsufficientSampleError
from weakfbsde_app.mgcheck.report import CheckReport
from weakfbsde_app.pde.field import DecouplingField
from weakfbsde_app.problem.coefficients import CoefficientSet
from weakfbsde_app.simulate.bundle import PathBundle, time_partition
from weakfbsde_app.simulate.euler import build_fbsde_solution
from weakfbsde_app.simulate.martingale import martingale_parts
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray
Which = Literal["MX", "MY"]

MIN_PATHS = 100
DEFAULT_THRESHOLD = 5.0
DEFAULT_ABS_TOL = 1e-9


@dataclass(frozen=True, slots=True)
class CrossVariationStudy:
    dts: tuple[float, ...]
    gaps: tuple[float, ...]

    @property
    def ratios(self) -> tuple[float, ...]:
        return tuple(a / b if b > 0 else float("inf") for a, b in zip(self.gaps, self.gaps[1:]))


def _require_sample(bundle: PathBundle, min_paths: int = MIN_PATHS) -> None:
    if bundle.n_paths < min_paths:
        raise InsufficientSampleError(
            f"{bundle.n_paths} paths given, at least {min_paths} needed",
            n_paths=bundle.n_paths,
            min_paths=min_paths,
        )


def _weights(bundle: PathBundle) -> Array:
    return np.ones(bundle.n_paths) if bundle.weights is None else np.asarray(bundle.weights, dtype=float)


def _mean_se(values: Array) -> tuple[float, float]:
    """Mean and standard error along axis 0."""
    n = values.shape[0]
    return float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(n))


def _z(mean: float, se: float, abs_tol: float) -> float:
    if abs(mean) <= abs_tol:
        return 0.0
    return abs(mean) / se if se > 0 else float("inf")


def family_threshold(threshold: float, m: int) -> float:
    """Bonferroni-adjusted threshold for m simultaneous two-sided z-tests."""
    return float(norm.isf(norm.sf(threshold) / max(m, 1)))


def _regression_z(target: Array, features: Sequence[Array], abs_tol: float) -> list[float]:
    """OLS z-scores of the slopes of target on [1, features], collinear columns dropped."""
    n = target.size
    cols = [np.ones(n)]
    for f in features:
        c = f - np.mean(f)
        scale = np.std(c)
        if scale <= 1e-12 * (1.0 + abs(float(np.mean(f)))):
            continue
        trial = np.column_stack(cols + [c / scale])
        if np.linalg.matrix_rank(trial, tol=1e-8 * np.sqrt(n)) == trial.shape[1]:
            cols.append(c / scale)
    if len(cols) == 1:
        return []
    A = np.column_stack(cols)
    beta, *_ = np.linalg.lstsq(A, target, rcond=None)
    resid = target - A @ beta
    dof = max(n - A.shape[1], 1)
    s2 = float(resid @ resid) / dof
    cov_diag = np.diag(np.linalg.inv(A.T @ A))
    return [_z(float(b), float(np.sqrt(s2 * c)), abs_tol) for b, c in zip(beta[1:], cov_diag[1:])]


def check_martingale(
    bundle: PathBundle,
    coeffs: CoefficientSet,
    which: Which = "MX",
    threshold: float = DEFAULT_THRESHOLD,
    abs_tol: float = DEFAULT_ABS_TOL,
    min_paths: int = MIN_PATHS,
) -> CheckReport:
    """Test that M^X (or M^Y) is a martingale under the bundle's measure.

    The headline is the horizon increment M_T - M_0. Per-step increment means and
    the slopes of a regression of each increment on (X_k, Y_k) form a family tested
    at a Bonferroni-adjusted threshold. Girsanov weights multiply every increment.

    Args:
        bundle: Simulated paths.
        coeffs: Coefficients defining the compensators.
        which: "MX" or "MY".
        threshold: Headline threshold in standard errors.
        abs_tol: Absolute tolerance for zero-variance statistics.
        min_paths: Smallest admissible ensemble.

    Returns:
        CheckReport: Two-sided report named "martingale-MX" or "martingale-MY".

    Raises:
        InsufficientSampleError: Fewer than min_paths paths.
        ConfigurationError: Unknown process name.
    """
    _require_sample(bundle, min_paths)
    if which not in ("MX", "MY"):
        raise ConfigurationError(f"unknown martingale {which!r}", which=which)
    parts = martingale_parts(bundle, coeffs)
    M = parts.MX if which == "MX" else parts.MY[..., None]
    w = _weights(bundle)
    dM = np.diff(M, axis=1) * w[:, None, None]
    horizon = (M[:, -1] - M[:, 0]) * w[:, None]

    heads = [_mean_se(horizon[:, c]) for c in range(M.shape[2])]
    head_c = int(np.argmax([_z(m, s, abs_tol) for m, s in heads]))
    stat, se = heads[head_c]

    step_means = np.zeros((bundle.n_t, M.shape[2]))
    family: list[float] = []
    reg_max = 0.0
    features = [bundle.X[:, :-1, i] for i in range(bundle.dim)] + [bundle.Y[:, :-1]]
    for k in range(bundle.n_t):
        for c in range(M.shape[2]):
            m, s = _mean_se(dM[:, k, c])
            step_means[k, c] = m
            family.append(_z(m, s, abs_tol))
            reg = _regression_z(dM[:, k, c], [f[:, k] for f in features], abs_tol)
            family.extend(reg)
            reg_max = max([reg_max, *reg])
    fam_thr = family_threshold(threshold, len(family))
    fam_max = max(family) if family else 0.0
    passed = abs(stat) <= threshold * se + abs_tol and fam_max <= fam_thr
    if not passed:
        logger.info(f"martingale-{which} rejected for {bundle.problem}: z={_z(stat, se, abs_tol):.2f}, family max {fam_max:.2f}")
    return CheckReport(
        name=f"martingale-{which}",
        statistic=stat,
        standard_error=se,
        threshold=threshold,
        passed=bool(passed),
        details={
            "component": head_c,
            "per_step_mean": step_means[:, head_c].tolist(),
            "family_size": len(family),
            "family_threshold": fam_thr,
            "family_max_z": fam_max,
            "regression_max_z": reg_max,
            "weighted": bundle.weights is not None,
        },
    )


def check_quadratic_variation(
    bundle: PathBundle,
    coeffs: CoefficientSet,
    threshold: float = DEFAULT_THRESHOLD,
    abs_tol: float = DEFAULT_ABS_TOL,
    min_paths: int = MIN_PATHS,
) -> CheckReport:
    """Compare the realised sum of dM^X dM^X^T with the integrated sigma sigma^T dt."""
    _require_sample(bundle, min_paths)
    parts = martingale_parts(bundle, coeffs)
    dMX = np.diff(parts.MX, axis=1)
    sigma = parts.coefficients.sigma
    model = np.einsum("pkij,pklj->pkil", sigma, sigma) * bundle.dts[None, :, None, None]
    realised = np.einsum("pki,pkj->pkij", dMX, dMX)
    gap = np.sum(realised - model, axis=1) * _weights(bundle)[:, None, None]

    d = bundle.dim
    components = {}
    for i in range(d):
        for j in range(i, d):
            components[f"{i}{j}"] = _mean_se(gap[:, i, j])
    scores = {key: _z(m, s, abs_tol) for key, (m, s) in components.items()}
    worst = max(scores, key=scores.get)
    stat, se = components[worst]
    passed = all(abs(m) <= threshold * s + abs_tol for m, s in components.values())
    per_step = np.mean(realised[..., 0, 0] - model[..., 0, 0], axis=0)
    return CheckReport(
        name="quadratic-variation",
        statistic=stat,
        standard_error=se,
        threshold=threshold,
        passed=bool(passed),
        details={
            "component": worst,
            "components": {k: {"mean": m, "se": s} for k, (m, s) in components.items()},
            "realised_mean": float(np.mean(np.sum(realised[..., 0, 0], axis=1))),
            "model_mean": float(np.mean(np.sum(model[..., 0, 0], axis=1))),
            "per_step_mean": per_step.tolist(),
        },
    )


def _cross_gaps(bundle: PathBundle, z: Array) -> Array:
    dX = np.diff(bundle.X, axis=1)
    dY = np.diff(bundle.Y, axis=1)
    inner = dY - np.einsum("pkd,pkd->pk", z, dX)
    return np.einsum("pk,pkd->pd", inner, dX)


def check_cross_variation(
    bundle: PathBundle,
    field: Optional[DecouplingField],
    threshold: float = DEFAULT_THRESHOLD,
    abs_tol: float = DEFAULT_ABS_TOL,
    min_paths: int = MIN_PATHS,
) -> CheckReport:
    """Per path, sum (dY - Z.dX) dX; its mean must vanish when d<M^Y, M^X> = Z d<X>.

    Raises:
        ConfigurationError: No field given.
        InsufficientSampleError: Fewer than min_paths paths.
    """
    if field is None:
        raise ConfigurationError("check_cross_variation needs a decoupling field")
    _require_sample(bundle, min_paths)
    w = _weights(bundle)
    gap = _cross_gaps(bundle, bundle.Z[:, :-1]) * w[:, None]
    du = np.stack([field.gradient(t, bundle.X[:, k]) for k, t in enumerate(bundle.times[:-1])], axis=1)
    field_gap = _cross_gaps(bundle, du) * w[:, None]

    comps = [_mean_se(gap[:, c]) for c in range(bundle.dim)]
    worst = int(np.argmax([_z(m, s, abs_tol) for m, s in comps]))
    stat, se = comps[worst]
    passed = all(abs(m) <= threshold * s + abs_tol for m, s in comps)
    qv = np.sum(np.diff(bundle.X, axis=1) ** 2, axis=(1, 2))
    return CheckReport(
        name="cross-variation",
        statistic=stat,
        standard_error=se,
        threshold=threshold,
        passed=bool(passed),
        details={
            "component": worst,
            "mean_abs_gap": float(np.mean(np.linalg.norm(gap, axis=1))),
            "field_mean_gap": float(np.mean(field_gap[:, worst])),
            "field_mean_abs_gap": float(np.mean(np.linalg.norm(field_gap, axis=1))),
            "mean_quadratic_variation": float(np.mean(qv)),
        },
    )


def cross_variation_refinement(
    coeffs: CoefficientSet,
    field: DecouplingField,
    x0: Array | float,
    dt: float,
    n_paths: int,
    seed: int,
    levels: int = 3,
) -> CrossVariationStudy:
    """Mean absolute cross-variation gap at dt, dt/2, ... against one field."""
    dts, gaps = [], []
    for level in range(levels):
        step = dt / 2**level
        times = time_partition(field.grid.T, dt=step)
        bundle = build_fbsde_solution(field, coeffs, x0, times, n_paths, seed)
        report = check_cross_variation(bundle, field)
        dts.append(float(times[1] - times[0]))
        gaps.append(float(report.details["mean_abs_gap"]))
        logger.info(f"cross-variation gap at dt={dts[-1]:.4g}: {gaps[-1]:.4e}")
    return CrossVariationStudy(dts=tuple(dts), gaps=tuple(gaps))


def feynman_kac_residual(
    bundle: PathBundle,
    field: DecouplingField,
    tolerance: float = 1e-8,
) -> CheckReport:
    """Sup and mean of |Y - u(t, X)| and |Z - Du(t, X)| over paths and steps."""
    ry = np.empty_like(bundle.Y)
    rz = np.empty_like(bundle.Y)
    for k, t in enumerate(bundle.times):
        x = bundle.X[:, k]
        ry[:, k] = np.abs(bundle.Y[:, k] - field.value(t, x))
        rz[:, k] = np.linalg.norm(bundle.Z[:, k] - field.gradient(t, x), axis=1)
    sup = float(max(np.max(ry), np.max(rz)))
    return CheckReport(
        name="feynman-kac",
        statistic=sup,
        standard_error=0.0,
        threshold=tolerance,
        passed=sup <= tolerance,
        form="upper-bound",
        details={
            "sup_y": float(np.max(ry)),
            "mean_y": float(np.mean(ry)),
            "sup_z": float(np.max(rz)),
            "mean_z": float(np.mean(rz)),
        },
    )


def moment_bounds(bundle: PathBundle, p: float = 2.0) -> Mapping[str, float]:
    """E sup|X|^p, E sup|Y|^p, E sup|N|^p and E (int |Z|^2 dt)^(p/2)."""
    if p < 1:
        raise ConfigurationError(f"moment order must be >= 1, got {p}", p=p)
    x_norm = np.linalg.norm(bundle.X, axis=2)
    energy = np.sum(np.sum(bundle.Z[:, :-1] ** 2, axis=2) * bundle.dts[None, :], axis=1)
    return {
        "sup_x": float(np.mean(np.max(x_norm, axis=1) ** p)),
        "sup_y": float(np.mean(np.max(np.abs(bundle.Y), axis=1) ** p)),
        "sup_n": float(np.mean(np.max(np.abs(bundle.N), axis=1) ** p)),
        "z_energy": float(np.mean(energy ** (p / 2.0))),
    }
