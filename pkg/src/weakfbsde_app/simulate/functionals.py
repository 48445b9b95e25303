#!src/weakfbsde_app/simulate/functionals.py
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np

from weakfbsde_app.errors import DomainError

Array = np.ndarray
FunctionalKind = Literal["tsirelson", "barlow-sigma", "custom"]

_BELOW_ONE = math.nextafter(1.0, 0.0)
_LAMBDA_MIN = math.sqrt(2.0) / 2.0


def fractional_part(x: Array | float) -> Array:
    """theta(x) = x - floor(x), kept inside [0, 1) under rounding."""
    x = np.asarray(x, dtype=float)
    return np.minimum(x - np.floor(x), _BELOW_ONE)


def tent(v: Array) -> Array:
    """eta(v) = v on [0, 1/2) and 1 - v on [1/2, 1)."""
    v = np.asarray(v, dtype=float)
    return np.where(v < 0.5, v, 1.0 - v)


def barlow_truncation(lam: float, tol: float = 1e-8) -> int:
    """Smallest N with lam^(N+1) * (1/2) / (1 - lam) < tol."""
    n = 0
    while lam ** (n + 1) * 0.5 / (1.0 - lam) >= tol:
        n += 1
    return n


@dataclass(frozen=True, slots=True)
class DiscretePath:
    """Path prefix sampled on a time grid, linearly interpolated in time.

    Attributes:
        times: Increasing node times, shape (k+1,).
        values: Scalar state per path, shape (n_paths, k+1).
    """

    times: Array
    values: Array

    def __call__(self, s: float) -> Array:
        times = self.times
        if times.size == 1:
            return self.values[:, 0]
        j = int(np.clip(np.searchsorted(times, s, side="right") - 1, 0, times.size - 2))
        w = (s - times[j]) / (times[j + 1] - times[j])
        w = min(max(w, 0.0), 1.0)
        return (1.0 - w) * self.values[:, j] + w * self.values[:, j + 1]


@dataclass(frozen=True, slots=True)
class PathFunctional:
    """Path functionals of the two pathological constructions, plus custom ones.

    Attributes:
        kind: Which functional.
        T: Horizon.
        partition: Tsirelson times t_0 = T > t_1 > ... decreasing to 0.
        lam: Barlow weight lambda in (sqrt(2)/2, 1).
        truncation: Barlow series truncation N.
        fn: Custom functional (t, path) -> (n,).
    """

    kind: FunctionalKind
    T: float = 1.0
    partition: tuple[float, ...] = ()
    lam: float = 0.75
    truncation: int = 0
    fn: Optional[Callable[[float, Callable[[float], Array]], Array]] = None

    def __post_init__(self) -> None:
        if self.kind == "tsirelson":
            p = np.asarray(self.partition, dtype=float)
            if p.size < 2 or p[0] != self.T or np.any(np.diff(p) >= 0) or p[-1] <= 0:
                raise DomainError(
                    "tsirelson partition must start at T and decrease strictly towards 0",
                    partition=self.partition,
                )
        elif self.kind == "barlow-sigma":
            if not (_LAMBDA_MIN < self.lam < 1.0):
                raise DomainError(f"lambda must lie in (sqrt(2)/2, 1), got {self.lam}", lam=self.lam)
        elif self.fn is None:
            raise DomainError("custom functional needs fn")

    @classmethod
    def tsirelson(cls, T: float = 1.0, depth: int = 20) -> PathFunctional:
        """Dyadic partition t_n = T 2^-n, stored up to n = depth + 1."""
        return cls(kind="tsirelson", T=float(T), partition=tuple(T * 2.0 ** -n for n in range(depth + 2)))

    @classmethod
    def barlow(cls, lam: float = 0.75, tol: float = 1e-8) -> PathFunctional:
        return cls(kind="barlow-sigma", lam=float(lam), truncation=barlow_truncation(lam, tol))

    @classmethod
    def custom(cls, fn: Callable[[float, Callable[[float], Array]], Array], T: float = 1.0) -> PathFunctional:
        return cls(kind="custom", T=float(T), fn=fn)

    @property
    def sigma_range(self) -> tuple[float, float]:
        return 1.0, 1.0 + 0.5 / (1.0 - self.lam)

    def __call__(self, t: float, path: Callable[[float], Array]) -> Array:
        if self.kind == "tsirelson":
            return tsirelson_drift(self, t, path)
        if self.kind == "custom":
            return np.atleast_1d(np.asarray(self.fn(t, path), dtype=float))
        raise TypeError("barlow-sigma is a state coefficient, use barlow_sigma")


def tsirelson_drift(functional: PathFunctional, t: float, path: Callable[[float], Array]) -> Array:
    """K(t, x) = theta((x(t_n) - x(t_{n+1})) / (t_n - t_{n+1})) for t in [t_n, t_{n-1}).

    Returns 0 below the last complete partition interval.
    """
    if not (0.0 < t <= functional.T):
        raise DomainError(f"t={t} outside (0, {functional.T}]", t=t)
    p = functional.partition
    n = next((i for i, tn in enumerate(p) if tn <= t), len(p))
    n = max(n, 1)
    if n + 1 >= len(p):
        return np.zeros_like(np.atleast_1d(np.asarray(path(p[-1]), dtype=float)))
    upper = np.atleast_1d(np.asarray(path(p[n]), dtype=float))
    lower = np.atleast_1d(np.asarray(path(p[n + 1]), dtype=float))
    return fractional_part((upper - lower) / (p[n] - p[n + 1]))


def barlow_sigma(functional: PathFunctional, x: Array | float) -> Array:
    """sigma_0(x) = 1 + sum_{n<=N} lam^n eta(theta(2^n x))."""
    x = np.asarray(x, dtype=float)
    out = np.ones_like(x)
    weight = 1.0
    scale = 1.0
    for _ in range(functional.truncation + 1):
        out += weight * tent(fractional_part(scale * x))
        weight *= functional.lam
        scale *= 2.0
    return out
