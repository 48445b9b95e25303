#!src/weakfbsde_app/problem/coefficients.py
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Any, Callable, Mapping, Optional, Protocol

import numpy as np

Array = np.ndarray

DriftFn = Callable[[float, Array, Array, Array], Array]
SigmaFn = Callable[[float, Array, Array, Array], Array]
DriverFn = Callable[[float, Array, Array, Array], Array]
TerminalFn = Callable[[Array], Array]
PathDriverFn = Callable[[float, Array, Array], Array]

ALL_VARIABLES: frozenset[str] = frozenset({"t", "x", "y", "z"})


class PathDrift(Protocol):
    """Adapted path functional: value at time t from the path prefix, shape (n,)."""

    def __call__(self, t: float, path: Callable[[float], Array]) -> Array: ...


@dataclass(frozen=True, slots=True)
class Bounds:
    """Declared constants of the standing assumptions.

    Attributes:
        C0: Sup-norm bound on sigma, f(., ., 0, 0) and g.
        c0: Ellipticity floor.
        L: Lipschitz constant in (x, y, z).
    """

    C0: float
    c0: float
    L: float


@dataclass(frozen=True, slots=True)
class CoefficientDeps:
    """Arguments each coefficient actually depends on.

    Drives the mollification variables and the linear fast path of the PDE
    solver. A conservative default declares full dependence.
    """

    b: frozenset[str] = ALL_VARIABLES
    sigma: frozenset[str] = ALL_VARIABLES
    f: frozenset[str] = ALL_VARIABLES

    @classmethod
    def of(cls, *, b: str = "txyz", sigma: str = "txyz", f: str = "txyz") -> CoefficientDeps:
        return cls(b=frozenset(b), sigma=frozenset(sigma), f=frozenset(f))

    @property
    def coupled(self) -> bool:
        """True when sigma or f sees (y, z)."""
        return bool((self.sigma | self.f) & {"y", "z"})

    @property
    def forward_coupled(self) -> bool:
        """True when b or sigma sees (y, z), so the forward SDE needs a field."""
        return bool((self.sigma | self.b) & {"y", "z"})


@dataclass(frozen=True, slots=True)
class CoefficientValues:
    b: Array
    sigma: Array
    f: Array


@dataclass(frozen=True, slots=True)
class CoefficientSet:
    """The tuple (b, sigma, f, g) of one FBSDE problem.

    All callables are vectorised: x is (n, d), y is (n,), z is (n, d) and
    t a float; b returns (n, d), sigma (n, d, d), f (n,), g (n,).
    """

    name: str
    dim_x: int
    b: DriftFn
    sigma: SigmaFn
    f: DriverFn
    g: TerminalFn
    bounds: Bounds
    deps: CoefficientDeps = field(default_factory=CoefficientDeps)
    path_dependent_drift: Optional[PathDrift] = None
    path_driver: Optional[PathDriverFn] = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.dim_x < 1:
            raise ValueError(f"dim_x must be positive, got {self.dim_x}")
        if self.bounds.c0 <= 0:
            raise ValueError(f"c0 must be positive, got {self.bounds.c0}")

    @property
    def linear(self) -> bool:
        """sigma and f free of (y, z): one linear solve per PDE step."""
        return not self.deps.coupled

    def evaluate(
        self,
        t: float,
        x: Array,
        y: Array,
        z: Array,
        path_value: Optional[Array] = None,
    ) -> CoefficientValues:
        """Evaluate (b, sigma, f) on a batch, adding path-functional terms if given."""
        x = as_state(x, self.dim_x)
        n = x.shape[0]
        y = np.broadcast_to(np.asarray(y, dtype=float), (n,))
        z = np.asarray(z, dtype=float)
        z = np.broadcast_to(z.reshape(-1, self.dim_x) if z.ndim else z, (n, self.dim_x))
        b = np.broadcast_to(np.asarray(self.b(t, x, y, z), dtype=float), (n, self.dim_x)).copy()
        sigma = np.broadcast_to(
            np.asarray(self.sigma(t, x, y, z), dtype=float), (n, self.dim_x, self.dim_x)
        )
        f = np.broadcast_to(np.asarray(self.f(t, x, y, z), dtype=float), (n,)).copy()
        if path_value is not None:
            k = np.broadcast_to(np.asarray(path_value, dtype=float), (n,))
            b += k[:, None]
            if self.path_driver is not None:
                f += np.asarray(self.path_driver(t, k, z), dtype=float)
        return CoefficientValues(b=b, sigma=sigma, f=f)

    def terminal(self, x: Array) -> Array:
        x = as_state(x, self.dim_x)
        return np.broadcast_to(np.asarray(self.g(x), dtype=float), (x.shape[0],))

    def with_(self, **changes: Any) -> CoefficientSet:
        return replace(self, **changes)


def as_state(x: Array | float, dim: int) -> Array:
    """Coerce scalars, (n,) or (n, d) input into an (n, d) float array."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        return arr.reshape(1, 1) if dim == 1 else np.full((1, dim), float(arr))
    if arr.ndim == 1:
        return arr.reshape(-1, 1) if dim == 1 else arr.reshape(1, dim)
    return arr


def scalar_sigma(fn: Callable[[float, Array, Array, Array], Array]) -> SigmaFn:
    """Lift a scalar diffusion (n,) into the (n, 1, 1) matrix convention."""

    def sigma(t: float, x: Array, y: Array, z: Array) -> Array:
        return np.asarray(fn(t, x, y, z), dtype=float).reshape(-1, 1, 1)

    return sigma


def constant_sigma(value: float, dim: int = 1) -> SigmaFn:
    eye = float(value) * np.eye(dim)

    def sigma(t: float, x: Array, y: Array, z: Array) -> Array:
        return np.broadcast_to(eye, (np.shape(x)[0], dim, dim))

    return sigma


def zero_drift(dim: int = 1) -> DriftFn:
    def b(t: float, x: Array, y: Array, z: Array) -> Array:
        return np.zeros((np.shape(x)[0], dim))

    return b


def zero_driver(t: float, x: Array, y: Array, z: Array) -> Array:
    return np.zeros(np.shape(x)[0])
