#!filepath: src/weakfbsde_app/simulate/backward.py
from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from weakfbsde_app.errors import ConfigurationError
from weakfbsde_app.pde.field import DecouplingField
from weakfbsde_app.problem.coefficients import CoefficientSet
from weakfbsde_app.simulate.bundle import PathBundle
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray
Driver = Callable[[float, Array, Array, Array], Array]


def _regress(x: Array, target: Array, degree: int) -> Array:
    if np.ptp(x) == 0.0:
        return np.full_like(target, np.mean(target))
    coef = np.polyfit(x, target, deg=degree)
    return np.polyval(coef, x)


def backward_recursion(
    bundle: PathBundle,
    coeffs: CoefficientSet,
    terminal: Optional[Callable[[Array], Array]] = None,
    field: Optional[DecouplingField] = None,
    degree: int = 3,
    driver: Optional[Driver] = None,
) -> PathBundle:
    """Pathwise Y_k = Y_{k+1} + f(t_k, X_k, Y_{k+1}, Z_k) dt - Z_k . dX_k from Y_n = g(X_n).

    Z_k is read from the field when one is given; otherwise (d = 1) it is the
    polynomial regression of Y_{k+1} dM^X_k on X_k divided by sigma^2 dt.

    Args:
        bundle: Forward paths.
        coeffs: Problem; supplies f, g and the forward coefficients.
        terminal: Terminal function overriding coeffs.g.
        field: Optional decoupling field for Z.
        degree: Degree of the regression polynomial.
        driver: Optional driver overriding coeffs.f.

    Returns:
        PathBundle: Copy with the recursion's Y and Z and N reset to 0.

    Raises:
        ConfigurationError: Regression requested for d > 1 or forward coefficients seeing (y, z).
    """
    if field is None and (bundle.dim != 1 or coeffs.deps.forward_coupled):
        raise ConfigurationError(
            "regression Z needs d = 1 and forward coefficients free of (y, z); pass a field",
            problem=coeffs.name,
        )
    g = terminal or coeffs.terminal
    f = driver or coeffs.f
    times, dts = bundle.times, bundle.dts
    P, n_t, d = bundle.n_paths, bundle.n_t, bundle.dim
    Y = np.empty((P, n_t + 1))
    Z = np.zeros((P, n_t + 1, d))
    Y[:, n_t] = np.asarray(g(bundle.X[:, n_t]), dtype=float).reshape(P)
    if field is not None:
        Z[:, n_t] = field.gradient(times[-1], bundle.X[:, n_t])

    for k in range(n_t - 1, -1, -1):
        t, x = times[k], bundle.X[:, k]
        dX = bundle.X[:, k + 1] - x
        if field is not None:
            z = field.gradient(t, x)
        else:
            vals = coeffs.evaluate(t, x, np.zeros(P), np.zeros((P, d)))
            dM = dX[:, 0] - vals.b[:, 0] * dts[k]
            s2 = vals.sigma[:, 0, 0] ** 2
            z = (_regress(x[:, 0], Y[:, k + 1] * dM, degree) / (s2 * dts[k]))[:, None]
        Z[:, k] = z
        run = np.asarray(f(t, x, Y[:, k + 1], z), dtype=float).reshape(P)
        Y[:, k] = Y[:, k + 1] + run * dts[k] - np.einsum("pd,pd->p", z, dX)

    logger.info(f"Backward recursion for {coeffs.name}: mean Y_0 = {float(np.mean(Y[:, 0])):.6g}")
    return bundle.with_(Y=Y, Z=Z, N=np.zeros_like(Y), meta={**bundle.meta, "backward": True})
