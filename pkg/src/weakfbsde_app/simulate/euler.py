#!filepath: src/weakfbsde_app/simulate/euler.py
from __future__ import annotations

from typing import Optional

import numpy as np

from weakfbsde_app.errors import ConfigurationError
from weakfbsde_app.pde.field import DecouplingField
from weakfbsde_app.problem.coefficients import CoefficientSet, as_state
from weakfbsde_app.simulate.bundle import PathBundle, brownian_increments
from weakfbsde_app.simulate.functionals import DiscretePath
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray

EXIT_WARNING_FRACTION = 0.10


def _path_value(coeffs: CoefficientSet, t: float, times: Array, X: Array, k: int) -> Optional[Array]:
    if coeffs.path_dependent_drift is None:
        return None
    if t <= 0.0:
        return np.zeros(X.shape[0])
    prefix = DiscretePath(times=times[: k + 1], values=X[:, : k + 1, 0])
    return np.asarray(coeffs.path_dependent_drift(t, prefix), dtype=float)


def euler_forward(
    coeffs: CoefficientSet,
    field: Optional[DecouplingField],
    x0: Array | float,
    times: Array,
    n_paths: int,
    seed: int,
    dB: Optional[Array] = None,
) -> PathBundle:
    """Euler-Maruyama with coefficients frozen at the left endpoint.

    With a field, (y, z) = (u, du)(t_k, X_k) are interpolated and recorded in Y and Z;
    paths leaving the field's box are absorbed on its boundary.

    Args:
        coeffs: Problem; a path-dependent drift is added to b.
        field: Decoupling field, required when b or sigma sees (y, z).
        x0: Initial state.
        times: Partition of [0, T].
        n_paths: Ensemble size.
        seed: Generator seed.
        dB: Optional increments to reuse, shape (n_paths, n_t, d).

    Returns:
        PathBundle: Paths with N = 0; Y and Z zero when no field is given.

    Raises:
        ConfigurationError: Missing field, or a path-dependent drift with non-constant sigma.
    """
    d = coeffs.dim_x
    if field is None and coeffs.deps.forward_coupled:
        raise ConfigurationError(f"{coeffs.name} needs a decoupling field for the forward SDE", problem=coeffs.name)
    if coeffs.path_dependent_drift is not None and coeffs.deps.sigma - {"t"}:
        raise ConfigurationError("path-dependent drift requires a state-independent sigma", problem=coeffs.name)
    if field is not None and field.grid.dim != d:
        raise ConfigurationError(f"field has d={field.grid.dim}, problem d={d}")

    times = np.asarray(times, dtype=float)
    n_t = times.size - 1
    dts = np.diff(times)
    if dB is None:
        dB = brownian_increments(seed, n_paths, times, d)
    elif dB.shape != (n_paths, n_t, d):
        raise ConfigurationError(f"increments shape {dB.shape} does not match ({n_paths}, {n_t}, {d})")

    X = np.empty((n_paths, n_t + 1, d))
    Y = np.zeros((n_paths, n_t + 1))
    Z = np.zeros((n_paths, n_t + 1, d))
    X[:, 0] = as_state(x0, d)[0]
    drift_path = np.zeros((n_paths, n_t)) if coeffs.path_dependent_drift is not None else None
    alive = np.ones(n_paths, dtype=bool) if field is not None else None

    for k in range(n_t):
        t = times[k]
        x = X[:, k]
        if field is not None:
            Y[:, k] = field.value(t, x)
            Z[:, k] = field.gradient(t, x)
        k_val = _path_value(coeffs, t, times, X, k)
        if drift_path is not None:
            drift_path[:, k] = k_val
        vals = coeffs.evaluate(t, x, Y[:, k], Z[:, k], path_value=k_val)
        step = vals.b * dts[k] + np.einsum("nij,nj->ni", vals.sigma, dB[:, k])
        nxt = x + step
        if alive is not None:
            nxt[~alive] = x[~alive]
            leaving = alive & ~field.inside(nxt)
            nxt[leaving] = field.grid.clip(nxt[leaving])
            alive &= ~leaving
        X[:, k + 1] = nxt

    if field is not None:
        Y[:, n_t] = field.value(times[-1], X[:, n_t])
        Z[:, n_t] = field.gradient(times[-1], X[:, n_t])

    warnings: tuple[str, ...] = ()
    exit_fraction = 0.0 if alive is None else float(np.mean(~alive))
    if exit_fraction > EXIT_WARNING_FRACTION:
        msg = f"domain-too-small: {exit_fraction:.1%} of paths left the field box"
        logger.warning(f"{coeffs.name}: {msg}")
        warnings = (msg,)

    logger.info(f"Simulated {n_paths} paths of {coeffs.name} over {n_t} steps (seed {seed})")
    return PathBundle(
        times=times,
        X=X,
        Y=Y,
        Z=Z,
        N=np.zeros((n_paths, n_t + 1)),
        dB=dB,
        seed=int(seed),
        drift_path=drift_path,
        alive=alive,
        problem=coeffs.name,
        meta={"exit_fraction": exit_fraction, "with_field": field is not None},
        warnings=warnings,
    )


def build_fbsde_solution(
    field: DecouplingField,
    coeffs: CoefficientSet,
    x0: Array | float,
    times: Array,
    n_paths: int,
    seed: int,
    dB: Optional[Array] = None,
) -> PathBundle:
    """Forward paths under the field, with Y = u(t, X), Z = du(t, X) and N = 0."""
    if field is None:
        raise ConfigurationError("build_fbsde_solution needs a decoupling field")
    bundle = euler_forward(coeffs, field, x0, times, n_paths, seed, dB=dB)
    return bundle.with_(meta={**bundle.meta, "fbsde": True})
