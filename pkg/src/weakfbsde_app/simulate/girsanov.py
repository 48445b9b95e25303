#!filepath: src/weakfbsde_app/simulate/girsanov.py
from __future__ import annotations

import numpy as np

from weakfbsde_app.errors import GirsanovOverflowError

Array = np.ndarray

_MAX_LOG = float(np.log(np.finfo(float).max)) - 1.0


def girsanov_log_weight(alpha_path: Array, dB: Array, times: Array) -> Array:
    """sum alpha_k dB_k - 1/2 sum |alpha_k|^2 dt_k per path, alpha at left endpoints."""
    dts = np.diff(np.asarray(times, dtype=float))
    alpha = np.asarray(alpha_path, dtype=float)
    dB = np.asarray(dB, dtype=float)
    if dB.ndim == 3:
        alpha = alpha.reshape(dB.shape)
        stoch = np.einsum("pkd,pkd->p", alpha, dB)
        quad = np.einsum("pkd,k->p", alpha**2, dts)
    else:
        stoch = np.sum(alpha * dB, axis=1)
        quad = (alpha**2) @ dts
    return stoch - 0.5 * quad


def girsanov_weight(alpha_path: Array, dB: Array, times: Array) -> Array:
    """exp(sum alpha dB - 1/2 sum alpha^2 dt) per path.

    Raises:
        GirsanovOverflowError: The exponent of some path is not finite or overflows.
    """
    log_w = girsanov_log_weight(alpha_path, dB, times)
    bad = np.flatnonzero(~np.isfinite(log_w) | (log_w > _MAX_LOG))
    if bad.size:
        i = int(bad[0])
        raise GirsanovOverflowError(f"Girsanov exponent {log_w[i]} overflows on path {i}", path=i, exponent=float(log_w[i]))
    return np.exp(log_w)
