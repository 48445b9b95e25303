#!filepath: src/weakfbsde_app/problem/catalog.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Callable, Dict, Mapping, Tuple

import numpy as np

from weakfbsde_app.errors import ConfigurationError, ProblemNotFoundError
from weakfbsde_app.problem.coefficients import (
    Bounds,
    CoefficientDeps,
    CoefficientSet,
    constant_sigma,
    scalar_sigma,
    zero_drift,
    zero_driver,
)
from weakfbsde_app.simulate.functionals import PathFunctional, barlow_sigma

Array = np.ndarray
Factory = Callable[..., CoefficientSet]

_NO_DEPS = CoefficientDeps.of(b="", sigma="", f="")


@dataclass(frozen=True, slots=True)
class ProblemEntry:
    """One built-in problem.

    Args:
        problem_id: Catalog identifier.
        description: One-line summary for `catalog`.
        dim: State dimension.
        factory: Builds the coefficient set from keyword parameters.
        defaults: Default parameters.
    """

    problem_id: str
    description: str
    dim: int
    factory: Factory
    defaults: Mapping[str, Any]

    def build(self, **params: Any) -> CoefficientSet:
        merged = {**self.defaults, **{k: v for k, v in params.items() if v is not None}}
        return self.factory(**merged)


def _first(z: Array) -> Array:
    return np.asarray(z)[:, 0]


def _heat(name: str, g: Callable[[Array], Array], C0: float, L: float, dim: int = 1) -> CoefficientSet:
    return CoefficientSet(
        name=name,
        dim_x=dim,
        b=zero_drift(dim),
        sigma=constant_sigma(1.0, dim),
        f=zero_driver,
        g=g,
        bounds=Bounds(C0=C0, c0=1.0, L=L),
        deps=_NO_DEPS,
    )


def _heat_x() -> CoefficientSet:
    return _heat("heat-x", lambda x: x[:, 0], C0=4.0, L=1.0)


def _heat_x2() -> CoefficientSet:
    return _heat("heat-x2", lambda x: x[:, 0] ** 2, C0=16.0, L=9.0)


def _heat2d_x2() -> CoefficientSet:
    return _heat("heat2d-x2", lambda x: np.sum(x**2, axis=1), C0=32.0, L=9.0, dim=2)


def _heat_cos() -> CoefficientSet:
    return _heat("heat-cos", lambda x: np.cos(x[:, 0]), C0=1.0, L=1.0)


def _sigma_z_clipped(lo: float = 0.5, hi: float = 2.0) -> CoefficientSet:
    return CoefficientSet(
        name="example-2.1",
        dim_x=1,
        b=zero_drift(1),
        sigma=scalar_sigma(lambda t, x, y, z: np.clip(_first(z), lo, hi)),
        f=zero_driver,
        g=lambda x: x[:, 0],
        bounds=Bounds(C0=max(4.0, hi), c0=lo, L=1.0),
        deps=CoefficientDeps.of(b="", sigma="z", f=""),
        meta={"clip": (lo, hi)},
    )


def _sigma_z() -> CoefficientSet:
    return CoefficientSet(
        name="example-2.1-degenerate",
        dim_x=1,
        b=zero_drift(1),
        sigma=scalar_sigma(lambda t, x, y, z: _first(z)),
        f=zero_driver,
        g=lambda x: x[:, 0],
        bounds=Bounds(C0=4.0, c0=1.0, L=1.0),
        deps=CoefficientDeps.of(b="", sigma="z", f=""),
    )


def _sigma_fixed_point() -> CoefficientSet:
    return CoefficientSet(
        name="example-2.2",
        dim_x=1,
        b=zero_drift(1),
        sigma=scalar_sigma(lambda t, x, y, z: np.clip(2.0 - _first(z), 0.5, 1.5)),
        f=zero_driver,
        g=lambda x: x[:, 0],
        bounds=Bounds(C0=4.0, c0=0.5, L=1.0),
        deps=CoefficientDeps.of(b="", sigma="z", f=""),
    )


def _zdep() -> CoefficientSet:
    return CoefficientSet(
        name="zdep",
        dim_x=1,
        b=zero_drift(1),
        sigma=scalar_sigma(lambda t, x, y, z: 1.0 + 0.1 * np.tanh(_first(z))),
        f=zero_driver,
        g=lambda x: np.sin(x[:, 0]),
        bounds=Bounds(C0=1.1, c0=0.9, L=1.0),
        deps=CoefficientDeps.of(b="", sigma="z", f=""),
    )


def _quasilinear_demo() -> CoefficientSet:
    return CoefficientSet(
        name="quasilinear-demo",
        dim_x=1,
        b=zero_drift(1),
        sigma=scalar_sigma(lambda t, x, y, z: 1.0 + 0.5 / (1.0 + _first(z) ** 2)),
        f=zero_driver,
        g=lambda x: np.sin(x[:, 0]),
        bounds=Bounds(C0=1.5, c0=1.0, L=1.0),
        deps=CoefficientDeps.of(b="", sigma="z", f=""),
    )


def _barlow(lam: float = 0.75) -> CoefficientSet:
    functional = PathFunctional.barlow(lam)
    return CoefficientSet(
        name="barlow",
        dim_x=1,
        b=zero_drift(1),
        sigma=scalar_sigma(lambda t, x, y, z: barlow_sigma(functional, x[:, 0])),
        f=zero_driver,
        g=lambda x: np.zeros(x.shape[0]),
        bounds=Bounds(C0=functional.sigma_range[1], c0=1.0, L=250.0),
        deps=CoefficientDeps.of(b="", sigma="x", f=""),
        meta={"lam": lam, "functional": functional},
    )


def _tsirelson(T: float = 1.0, depth: int = 20) -> CoefficientSet:
    return CoefficientSet(
        name="tsirelson",
        dim_x=1,
        b=zero_drift(1),
        sigma=constant_sigma(1.0),
        f=zero_driver,
        g=lambda x: np.zeros(x.shape[0]),
        bounds=Bounds(C0=1.0, c0=1.0, L=1.0),
        deps=_NO_DEPS,
        path_dependent_drift=PathFunctional.tsirelson(T, depth),
    )


def _tsirelson_fbsde(T: float = 1.0, depth: int = 20) -> CoefficientSet:
    """X drifts with Z + K, driver 1/2|Z|^2 + K Z, terminal 0; Y = Z = 0 solves it."""
    return CoefficientSet(
        name="tsirelson-fbsde",
        dim_x=1,
        b=lambda t, x, y, z: np.array(z, dtype=float, copy=True),
        sigma=constant_sigma(1.0),
        f=lambda t, x, y, z: 0.5 * np.sum(z**2, axis=1),
        g=lambda x: np.zeros(x.shape[0]),
        bounds=Bounds(C0=1.0, c0=1.0, L=1.0),
        deps=CoefficientDeps.of(b="z", sigma="", f="z"),
        path_dependent_drift=PathFunctional.tsirelson(T, depth),
        path_driver=lambda t, k, z: k * z[:, 0],
    )


def _drift_k(k: float = 0.5) -> CoefficientSet:
    """Drift-control FBSDE with constant kernel: b = Z + k, f = kZ + 1/2 Z^2."""
    return CoefficientSet(
        name="drift-k",
        dim_x=1,
        b=lambda t, x, y, z: z + k,
        sigma=constant_sigma(1.0),
        f=lambda t, x, y, z: k * z[:, 0] + 0.5 * z[:, 0] ** 2,
        g=lambda x: np.zeros(x.shape[0]),
        bounds=Bounds(C0=1.0, c0=1.0, L=2.0 + abs(k)),
        deps=CoefficientDeps.of(b="z", sigma="", f="z"),
        meta={"k": k},
    )


def _hedging(strike_lo: float = 0.0, strike_hi: float = 2.0) -> CoefficientSet:
    def payoff(x: Array) -> Array:
        s = x[:, 0]
        return np.logaddexp(0.0, s - strike_lo) - np.logaddexp(0.0, s - strike_hi)

    return CoefficientSet(
        name="hedging",
        dim_x=1,
        b=zero_drift(1),
        sigma=scalar_sigma(lambda t, x, y, z: 0.5 + 0.25 * np.cos(x[:, 0])),
        f=zero_driver,
        g=payoff,
        bounds=Bounds(C0=strike_hi - strike_lo + 1.0, c0=0.25, L=1.0),
        deps=CoefficientDeps.of(b="", sigma="x", f=""),
    )


_ENTRIES: Tuple[ProblemEntry, ...] = (
    ProblemEntry("heat-x", "heat equation with g=x; u=x", 1, _heat_x, {}),
    ProblemEntry("heat-x2", "heat equation with g=x^2; u=x^2+(T-t)", 1, _heat_x2, {}),
    ProblemEntry("heat2d-x2", "2d heat equation with g=|x|^2", 2, _heat2d_x2, {}),
    ProblemEntry("heat-cos", "heat equation with g=cos x; u=exp(-(T-t)/2) cos x", 1, _heat_cos, {}),
    ProblemEntry("example-2.1", "sigma=clip(z,0.5,2), g=x; u=x", 1, _sigma_z_clipped, {"lo": 0.5, "hi": 2.0}),
    ProblemEntry("example-2.1-degenerate", "sigma=z, g=x (not elliptic)", 1, _sigma_z, {}),
    ProblemEntry("example-2.2", "sigma=clip(2-z,0.5,1.5), g=x; Z=1", 1, _sigma_fixed_point, {}),
    ProblemEntry("zdep", "sigma=1+0.1 tanh z, g=sin x", 1, _zdep, {}),
    ProblemEntry("quasilinear-demo", "sigma=1+0.5/(1+z^2), g=sin x", 1, _quasilinear_demo, {}),
    ProblemEntry("barlow", "driftless diffusion with Barlow sigma_0", 1, _barlow, {"lam": 0.75}),
    ProblemEntry("tsirelson", "unit diffusion with Tsirelson drift K", 1, _tsirelson, {"T": 1.0, "depth": 20}),
    ProblemEntry("tsirelson-fbsde", "drift Z+K, driver Z^2/2+KZ, g=0", 1, _tsirelson_fbsde, {"T": 1.0, "depth": 20}),
    ProblemEntry("drift-k", "drift control FBSDE with constant kernel k", 1, _drift_k, {"k": 0.5}),
    ProblemEntry("hedging", "local volatility hedge of a smoothed call spread", 1, _hedging, {}),
)

CATALOG: Dict[str, ProblemEntry] = {e.problem_id: e for e in _ENTRIES}


def problem_ids() -> tuple[str, ...]:
    return tuple(CATALOG)


def get_entry(problem_id: str) -> ProblemEntry:
    """Look up a catalog entry.

    Raises:
        ProblemNotFoundError: For unknown identifiers.
    """
    try:
        return CATALOG[problem_id]
    except KeyError:
        raise ProblemNotFoundError(
            f"unknown problem '{problem_id}', known: {', '.join(CATALOG)}",
            problem=problem_id,
        ) from None


def get_problem(problem_id: str, **params: Any) -> CoefficientSet:
    """Build the coefficient set of a catalog problem.

    Args:
        problem_id: Catalog identifier such as "heat-x2" or "barlow".
        **params: Overrides of the entry defaults; unknown keys are rejected.

    Returns:
        CoefficientSet: Immutable coefficients.
    """
    entry = get_entry(problem_id)
    unknown = set(params) - set(entry.defaults)
    if unknown:
        raise ConfigurationError(
            f"problem '{problem_id}' takes no parameter(s) {sorted(unknown)}",
            problem=problem_id,
        )
    return entry.build(**params)
