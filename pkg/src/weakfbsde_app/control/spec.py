#!filepath: src/weakfbsde_app/control/spec.py
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Any, Callable, Mapping, Optional, Tuple

import numpy as np

from weakfbsde_app.errors import DomainError
from weakfbsde_app.simulate.functionals import PathFunctional, barlow_sigma

Array = np.ndarray

TABLE_STEP = 2.0**-10
TABLE_HALF_WIDTH = 16.0


@dataclass(frozen=True, slots=True)
class HamiltonianSpec:
    """One-dimensional control problem: coefficients as functions of the control.

    Attributes:
        name: Label used in reports.
        control_lo: Lower end of the control set A.
        control_hi: Upper end of A; equal to control_lo for a singleton.
        n_controls: Size of the uniform control grid scanned before refinement.
        b_of: (t, alpha) -> drift.
        sigma_of: (t, alpha) -> diffusion, positive.
        f_of: (t, x, alpha) -> running reward.
        g: Terminal reward on states of shape (n,).
        g_nodes: Optional terminal data on a uniform PDE axis; defaults to g.
        meta: Parameters of the construction.
    """

    name: str
    control_lo: float
    control_hi: float
    b_of: Callable[[float, Array], Array]
    sigma_of: Callable[[float, Array], Array]
    f_of: Callable[[float, Array, Array], Array]
    g: Callable[[Array], Array]
    n_controls: int = 64
    g_nodes: Optional[Callable[[Array], Array]] = None
    meta: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.control_lo > self.control_hi:
            raise DomainError(
                f"empty control set [{self.control_lo}, {self.control_hi}]",
                control_lo=self.control_lo,
                control_hi=self.control_hi,
            )
        if self.n_controls < 2:
            raise DomainError(f"n_controls must be >= 2, got {self.n_controls}", n_controls=self.n_controls)

    @property
    def singleton(self) -> bool:
        return self.control_lo == self.control_hi

    @property
    def controls(self) -> Array:
        return np.linspace(self.control_lo, self.control_hi, self.n_controls)

    def terminal_on_axis(self, axis: Array) -> Array:
        if self.g_nodes is not None:
            return np.asarray(self.g_nodes(axis), dtype=float)
        return np.asarray(self.g(axis), dtype=float)

    def with_controls(self, lo: float, hi: float, n_controls: Optional[int] = None) -> HamiltonianSpec:
        return replace(self, control_lo=float(lo), control_hi=float(hi), n_controls=n_controls or self.n_controls)


def double_integral_on_axis(axis: Array, density: Callable[[Array], Array]) -> Array:
    """g with g(0) = 0, g'(0) = 0 and second differences h^2 density(x_i) on a uniform axis.

    The recurrence g_{i+1} = 2 g_i - g_{i-1} + h^2 density(x_i) is anchored at the node
    nearest 0 with a symmetric start and summed outwards in both directions.
    """
    axis = np.asarray(axis, dtype=float)
    h = float(axis[1] - axis[0])
    j0 = int(np.argmin(np.abs(axis)))
    s = np.asarray(density(axis), dtype=float) * h * h
    g = np.zeros_like(axis)
    right = s[j0 : axis.size - 1]
    if right.size:
        steps = np.cumsum(right) - 0.5 * right[0]
        g[j0 + 1 :] = np.cumsum(steps)
    left = s[j0:0:-1]
    if left.size:
        steps = np.cumsum(left) - 0.5 * left[0]
        g[:j0][::-1] = np.cumsum(steps)
    return g


@lru_cache(maxsize=8)
def barlow_terminal_table(lam: float) -> Tuple[Array, Array]:
    """Fine table of g(x) = int_0^x int_0^r sigma_0(s)^2 ds dr on [-16, 16] with step 2^-10."""
    functional = PathFunctional.barlow(lam)
    m = int(round(TABLE_HALF_WIDTH / TABLE_STEP))
    xs = TABLE_STEP * np.arange(-m, m + 1)
    g = double_integral_on_axis(xs, lambda x: barlow_sigma(functional, x) ** 2)
    xs.setflags(write=False)
    g.setflags(write=False)
    return xs, g


def barlow_terminal(lam: float) -> Callable[[Array], Array]:
    def g(x: Array) -> Array:
        xs, table = barlow_terminal_table(float(lam))
        return np.interp(np.asarray(x, dtype=float).reshape(-1), xs, table)

    return g


def drift_control_spec(k: float = 0.5, half_width: float = 2.0, n_controls: int = 64) -> HamiltonianSpec:
    """sigma = 1, b = alpha, f = -1/2 (alpha - k)^2 on A = [k - w, k + w], g = 0."""
    return HamiltonianSpec(
        name="drift-k",
        control_lo=k - half_width,
        control_hi=k + half_width,
        n_controls=n_controls,
        b_of=lambda t, a: a,
        sigma_of=lambda t, a: np.ones_like(a),
        f_of=lambda t, x, a: -0.5 * (a - k) ** 2,
        g=lambda x: np.zeros(np.shape(x)[0]),
        meta={"k": k},
    )


def diffusion_control_spec(
    lam: float = 0.75,
    control_hi: Optional[float] = None,
    n_controls: int = 64,
) -> HamiltonianSpec:
    """sigma = alpha, b = 0, f = -(alpha^4 + sigma_0(x)^4)/4 and g'' = sigma_0^2.

    The default control set is the hull [1, 1 + 1/(2(1 - lam))] of sigma_0's range.
    """
    functional = PathFunctional.barlow(lam)
    hi = functional.sigma_range[1] if control_hi is None else float(control_hi)

    def f_of(t: float, x: Array, a: Array) -> Array:
        s = barlow_sigma(functional, x)
        return -0.25 * (a**4 + s**4)

    return HamiltonianSpec(
        name="barlow-diffusion",
        control_lo=1.0,
        control_hi=hi,
        n_controls=n_controls,
        b_of=lambda t, a: np.zeros_like(a),
        sigma_of=lambda t, a: a,
        f_of=f_of,
        g=barlow_terminal(lam),
        g_nodes=lambda axis: double_integral_on_axis(axis, lambda x: barlow_sigma(functional, x) ** 2),
        meta={"lam": lam, "functional": functional},
    )


def singleton_spec(spec: HamiltonianSpec, alpha0: float) -> HamiltonianSpec:
    return spec.with_controls(alpha0, alpha0)


SPEC_FACTORIES: Mapping[str, Callable[..., HamiltonianSpec]] = {
    "drift-k": drift_control_spec,
    "barlow-diffusion": diffusion_control_spec,
}
