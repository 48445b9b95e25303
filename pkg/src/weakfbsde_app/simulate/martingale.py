#!filepath: src/weakfbsde_app/simulate/martingale.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

import numpy as np

from weakfbsde_app.errors import EllipticityError
from weakfbsde_app.problem.coefficients import CoefficientSet
from weakfbsde_app.simulate.bundle import PathBundle
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray


@dataclass(frozen=True, slots=True)
class PathCoefficients:
    """b, sigma and f along every path at the left endpoint of every step."""

    b: Array
    sigma: Array
    f: Array


@dataclass(frozen=True, slots=True)
class MartingaleParts:
    """M^X_k = X_k - sum b dt and M^Y_k = Y_k + sum f dt - sum Z.b dt."""

    MX: Array
    MY: Array
    coefficients: PathCoefficients


@dataclass(frozen=True, slots=True)
class RecoveredBrownian:
    increments: Array
    stats: Mapping[str, float]


def path_coefficients(bundle: PathBundle, coeffs: CoefficientSet) -> PathCoefficients:
    P, n_t, d = bundle.n_paths, bundle.n_t, bundle.dim
    b = np.empty((P, n_t, d))
    sigma = np.empty((P, n_t, d, d))
    f = np.empty((P, n_t))
    for k in range(n_t):
        k_val = None if bundle.drift_path is None else bundle.drift_path[:, k]
        vals = coeffs.evaluate(bundle.times[k], bundle.X[:, k], bundle.Y[:, k], bundle.Z[:, k], path_value=k_val)
        b[:, k], sigma[:, k], f[:, k] = vals.b, vals.sigma, vals.f
    return PathCoefficients(b=b, sigma=sigma, f=f)


def martingale_parts(bundle: PathBundle, coeffs: CoefficientSet) -> MartingaleParts:
    pc = path_coefficients(bundle, coeffs)
    dts = bundle.dts
    drift = pc.b * dts[None, :, None]
    zero_d = np.zeros((bundle.n_paths, 1, bundle.dim))
    MX = bundle.X - np.concatenate([zero_d, np.cumsum(drift, axis=1)], axis=1)
    run = (pc.f - np.einsum("pkd,pkd->pk", bundle.Z[:, :-1], pc.b)) * dts[None, :]
    MY = bundle.Y + np.concatenate([np.zeros((bundle.n_paths, 1)), np.cumsum(run, axis=1)], axis=1)
    return MartingaleParts(MX=MX, MY=MY, coefficients=pc)


def residual_orthogonal_martingale(bundle: PathBundle, coeffs: CoefficientSet) -> PathBundle:
    """N_k = Y_0 - M^Y_k + sum_{j<k} Z_j . dM^X_j."""
    parts = martingale_parts(bundle, coeffs)
    dMX = np.diff(parts.MX, axis=1)
    stoch = np.einsum("pkd,pkd->pk", bundle.Z[:, :-1], dMX)
    integral = np.concatenate([np.zeros((bundle.n_paths, 1)), np.cumsum(stoch, axis=1)], axis=1)
    N = bundle.Y[:, :1] - parts.MY + integral
    logger.info(f"Orthogonal martingale for {bundle.problem}: sup|N| = {float(np.max(np.abs(N))):.3e}")
    return bundle.with_(N=N)


def _lag1(x: Array) -> float:
    a, b = x[:, :-1].reshape(-1), x[:, 1:].reshape(-1)
    if a.size < 2 or np.std(a) == 0 or np.std(b) == 0:
        return 0.0
    return float(np.corrcoef(a, b)[0, 1])


def recover_brownian(bundle: PathBundle, coeffs: CoefficientSet) -> RecoveredBrownian:
    """sigma(t_k, Theta_k)^{-1} dM^X_k with mean, variance-ratio and lag-1 statistics.

    Raises:
        EllipticityError: sigma is singular on some path and step.
    """
    parts = martingale_parts(bundle, coeffs)
    sigma = parts.coefficients.sigma
    det = np.linalg.det(sigma)
    bad = np.argwhere(det == 0.0)
    if bad.size:
        p, k = (int(v) for v in bad[0])
        raise EllipticityError(f"sigma singular on path {p} at step {k}", path=p, step=k)
    dMX = np.diff(parts.MX, axis=1)
    inc = np.linalg.solve(sigma, dMX[..., None])[..., 0]
    dts = bundle.dts
    scaled = inc / np.sqrt(dts)[None, :, None]
    stats = {
        "mean": float(np.mean(scaled)),
        "mean_se": float(np.std(scaled) / np.sqrt(scaled.size)),
        "variance_ratio": float(np.mean(scaled**2)),
        "lag1_autocorr": _lag1(scaled[..., 0]),
        "max_step_mean_z": float(
            np.max(np.abs(np.mean(scaled, axis=0)) / (np.std(scaled, axis=0) / np.sqrt(bundle.n_paths) + 1e-300))
        ),
    }
    return RecoveredBrownian(increments=inc, stats=stats)
