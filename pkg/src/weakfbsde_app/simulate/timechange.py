#!filepath: src/weakfbsde_app/simulate/timechange.py
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Optional

import numpy as np

from weakfbsde_app.errors import DomainError
from weakfbsde_app.simulate.bundle import normal_chunks
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray
ScalarFn = Callable[[Array], Array]

CHUNK_BLOCKS = 2


@dataclass(frozen=True, slots=True)
class TimeChangePaths:
    """X_t = W(tau_t) sampled at target times, plus running integrals int_0^t h(X_s) ds.

    Attributes:
        times: Target times, shape (n_t + 1,).
        X: States at the target times, shape (n_paths, n_t + 1).
        integrals: Name -> running integral at the target times, shape (n_paths, n_t + 1).
        du: Step of the underlying Brownian clock.
        clock_steps: Clock steps consumed by the slowest path.
    """

    times: Array
    X: Array
    integrals: Mapping[str, Array]
    du: float
    clock_steps: int


def _run_chunk(
    noise: Array,
    sigma: ScalarFn,
    integrands: Mapping[str, ScalarFn],
    times: Array,
    x0: float,
    du: float,
) -> tuple[Array, dict[str, Array], int]:
    n, steps = noise.shape
    n1 = times.size
    W = np.full(n, float(x0))
    A = np.zeros(n)
    acc = {name: np.zeros(n) for name in integrands}
    X = np.empty((n, n1))
    I = {name: np.empty((n, n1)) for name in integrands}
    nxt = np.zeros(n, dtype=int)
    rows = np.arange(n)
    sqrt_du = math.sqrt(du)
    used = 0

    def record() -> None:
        while True:
            hit = (nxt < n1) & (A >= times[np.minimum(nxt, n1 - 1)])
            if not hit.any():
                return
            r, c = rows[hit], nxt[hit]
            X[r, c] = W[hit]
            for name in integrands:
                I[name][r, c] = acc[name][hit]
            nxt[hit] += 1

    record()
    for j in range(steps):
        if np.all(nxt >= n1):
            break
        inv = 1.0 / np.asarray(sigma(W), dtype=float) ** 2
        for name, h in integrands.items():
            acc[name] += np.asarray(h(W), dtype=float) * inv * du
        A += inv * du
        W = W + sqrt_du * noise[:, j]
        used = j + 1
        record()
    if np.any(nxt < n1):
        raise DomainError(
            f"clock budget of {steps} steps exhausted before T on {int(np.sum(nxt < n1))} paths",
            steps=steps,
        )
    return X, I, used


def time_change_paths(
    sigma: ScalarFn,
    T: float,
    n_t: int,
    n_paths: int,
    seed: int,
    x0: float = 0.0,
    du: float = 2e-3,
    u_max: Optional[float] = None,
    sigma_max: Optional[float] = None,
    integrands: Optional[Mapping[str, ScalarFn]] = None,
) -> TimeChangePaths:
    """Driftless dX = sigma(X) dB by time change of a Brownian motion W.

    The clock A(u) = int_0^u sigma(W)^-2 dv is accumulated with left endpoints, tau_t is the
    first clock step with A >= t, and int_0^t h(X_s) ds = int_0^tau h(W) sigma(W)^-2 du.

    Args:
        sigma: Positive scalar diffusion coefficient.
        T: Horizon.
        n_t: Number of target steps on [0, T].
        n_paths: Ensemble size.
        seed: Generator seed; paths use the 1024-path block streams.
        x0: Start.
        du: Clock step.
        u_max: Clock budget; defaults to T * sigma_max^2.
        sigma_max: Upper bound of sigma used for the default budget.
        integrands: Running integrals to accumulate.

    Raises:
        DomainError: A path has not reached T within the clock budget.
    """
    if u_max is None:
        if sigma_max is None:
            raise DomainError("time_change_paths needs u_max or sigma_max")
        u_max = T * sigma_max**2 * 1.05
    steps = int(math.ceil(u_max / du))
    times = np.linspace(0.0, float(T), int(n_t) + 1)
    integrands = dict(integrands or {})

    X = np.empty((n_paths, times.size))
    I = {name: np.empty((n_paths, times.size)) for name in integrands}
    slowest = 0
    for start, stop, noise in normal_chunks(seed, n_paths, (steps,), CHUNK_BLOCKS):
        xs, ints, used = _run_chunk(noise, sigma, integrands, times, x0, du)
        X[start:stop] = xs
        for name in integrands:
            I[name][start:stop] = ints[name]
        slowest = max(slowest, used)
    logger.info(f"Time-changed {n_paths} paths to T={T} with clock step {du} ({slowest} clock steps)")
    return TimeChangePaths(times=times, X=X, integrals=I, du=du, clock_steps=slowest)
