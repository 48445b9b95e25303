#!filepath: src/weakfbsde_app/control/hamiltonians.py
from __future__ import annotations

from typing import Tuple

import numpy as np

from weakfbsde_app.control.maximize import maximize
from weakfbsde_app.control.spec import HamiltonianSpec
from weakfbsde_app.errors import DegenerateSigmaError

Array = np.ndarray
ArrayLike = Array | float


def _column(v: ArrayLike, n: int) -> Array:
    return np.broadcast_to(np.asarray(v, dtype=float).reshape(-1), (n,))[:, None]


def _size(*values: ArrayLike) -> int:
    return int(np.broadcast(*[np.asarray(v, dtype=float).reshape(-1) for v in values]).shape[0])


def _sup(spec: HamiltonianSpec, t: float, x: ArrayLike, p: ArrayLike, q: ArrayLike, r: ArrayLike) -> Tuple[Array, Array]:
    """sup over A of p b + q sigma + r sigma^2 / 2 + f, node-wise."""
    n = _size(x, p, q, r)
    xs, pc, qc, rc = _column(x, n), _column(p, n), _column(q, n), _column(r, n)

    def objective(alpha: Array) -> Array:
        sig = spec.sigma_of(t, alpha)
        return pc * spec.b_of(t, alpha) + qc * sig + 0.5 * rc * sig**2 + spec.f_of(t, xs, alpha)

    best = maximize(objective, spec.controls, n)
    return best.value, best.argmax


def hamiltonian_H(spec: HamiltonianSpec, t: float, z: ArrayLike, gamma: ArrayLike, x: ArrayLike = 0.0) -> Tuple[Array, Array]:
    """H(t, z, gamma) = sup_alpha [1/2 sigma^2 gamma + b z + f]; returns (value, argmax)."""
    return _sup(spec, t, x, z, 0.0, gamma)


def hamiltonian_tilde(spec: HamiltonianSpec, t: float, y_t: ArrayLike, z_t: ArrayLike, x: ArrayLike = 0.0) -> Tuple[Array, Array]:
    """sup_alpha [y b + z sigma + f]."""
    return _sup(spec, t, x, y_t, z_t, 0.0)


def hamiltonian_hat(spec: HamiltonianSpec, t: float, y_hat: ArrayLike, z_hat: ArrayLike, x: ArrayLike = 0.0) -> Tuple[Array, Array]:
    """sup_alpha [y b + 1/2 z sigma^2 + f]; the same integrand as H under (y, z) = (z, gamma)."""
    return _sup(spec, t, x, y_hat, 0.0, z_hat)


def f_star(spec: HamiltonianSpec, t: float, z: ArrayLike, x: ArrayLike = 0.0) -> Tuple[Array, Array]:
    """sup_alpha [z b + f] and its maximiser."""
    return _sup(spec, t, x, z, 0.0, 0.0)


def adjoint_transform(sigma_val: ArrayLike, tilde_y: ArrayLike, tilde_z: ArrayLike) -> Tuple[Array, Array]:
    """(y, z) -> (y, z / sigma) for sigma > 0."""
    sigma = np.asarray(sigma_val, dtype=float)
    if np.any(sigma <= 0.0) or not np.all(np.isfinite(sigma)):
        raise DegenerateSigmaError(f"sigma must be positive, got {sigma_val}", sigma=np.asarray(sigma_val).tolist())
    return np.asarray(tilde_y, dtype=float), np.asarray(tilde_z, dtype=float) / sigma


def inverse_adjoint_transform(sigma_val: ArrayLike, hat_y: ArrayLike, hat_z: ArrayLike) -> Tuple[Array, Array]:
    sigma = np.asarray(sigma_val, dtype=float)
    if np.any(sigma <= 0.0):
        raise DegenerateSigmaError(f"sigma must be positive, got {sigma_val}")
    return np.asarray(hat_y, dtype=float), np.asarray(hat_z, dtype=float) * sigma
