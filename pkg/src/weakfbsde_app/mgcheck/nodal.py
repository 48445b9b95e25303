#!filepath: src/weakfbsde_app/mgcheck/nodal.py
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from weakfbsde_app.errors import DomainError, OutOfNodalSetError
from weakfbsde_app.pde.field import DecouplingField
from weakfbsde_app.pde.grid import TimeSpaceGrid
from weakfbsde_app.pde.quasilinear import PicardOptions, solve_quasilinear
from weakfbsde_app.problem.assumptions import ProbePlan
from weakfbsde_app.problem.coefficients import CoefficientSet
from weakfbsde_app.problem.transforms import mollify, shift_coefficients
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray

BISECTION_TOL = 1e-6
BISECTION_MAX = 60


@dataclass(frozen=True, slots=True)
class NodalResult:
    """Bounds of the nodal interval at (t, x) for mollification index n.

    Attributes:
        t: Query time.
        x: Query point, shape (d,).
        n: Mollification index.
        u_lower: Solution of the problem shifted with alpha = 0.
        u_upper: Solution of the problem shifted with alpha = 1.
        eps_n: Diffusion mollification tolerance actually used.
        c_n: Estimated sup of the second derivative of the upper solution.
        remollified: True when eps_n had to be tightened against c_n.
        alpha_star: Interpolation index hitting y_target, when selected.
        y_target: Requested value, when selected.
        iterations: Bisection steps used.
    """

    t: float
    x: tuple[float, ...]
    n: int
    u_lower: float
    u_upper: float
    eps_n: float
    c_n: float
    remollified: bool = False
    alpha_star: Optional[float] = None
    y_target: Optional[float] = None
    iterations: int = 0

    @property
    def width(self) -> float:
        return self.u_upper - self.u_lower

    def contains(self, y: float, tol: float = 0.0) -> bool:
        return self.u_lower - tol <= y <= self.u_upper + tol


def _point(grid: TimeSpaceGrid, t: float, x: Array | float) -> Array:
    pt = np.asarray(x, dtype=float).reshape(1, -1)
    if pt.shape[1] != grid.dim:
        raise DomainError(f"point has dimension {pt.shape[1]}, grid has {grid.dim}", x=pt.tolist())
    if not 0.0 <= t <= grid.T or not bool(grid.contains(pt)[0]):
        raise DomainError(f"({t}, {pt[0].tolist()}) lies outside the grid", t=t, x=pt[0].tolist())
    return pt


def solve_at_alpha(
    mollified: CoefficientSet,
    grid: TimeSpaceGrid,
    n: int,
    alpha: float,
    opts: Optional[PicardOptions] = None,
) -> DecouplingField:
    """Solve the PDE for the alpha-interpolated shift of already mollified coefficients."""
    return solve_quasilinear(shift_coefficients(mollified, n, alpha), grid, opts)


def _upper_curvature(field: DecouplingField) -> float:
    worst = 0.0
    for k in range(field.grid.n_t + 1):
        h = field.hessian_at(k)
        inner = h[(slice(1, -1),) * field.grid.dim]
        if inner.size:
            worst = max(worst, float(np.max(np.abs(inner))))
    return worst


def _bounds(
    coeffs: CoefficientSet,
    grid: TimeSpaceGrid,
    t: float,
    x: Array | float,
    n: int,
    eps_n: Optional[float],
    opts: Optional[PicardOptions],
    plan: Optional[ProbePlan],
) -> tuple[NodalResult, CoefficientSet]:
    pt = _point(grid, t, x)
    eps = 1.0 / n if eps_n is None else float(eps_n)
    smooth = mollify(coeffs, n, eps, plan)

    def pair(c: CoefficientSet) -> tuple[DecouplingField, DecouplingField]:
        with ThreadPoolExecutor(max_workers=2) as pool:
            lo = pool.submit(solve_at_alpha, c, grid, n, 0.0, opts)
            hi = pool.submit(solve_at_alpha, c, grid, n, 1.0, opts)
            return lo.result(), hi.result()

    lower, upper = pair(smooth)
    c_n = _upper_curvature(upper)
    remollified = False
    limit = coeffs.bounds.C0 * c_n * n
    if limit > 0 and eps > 1.0 / limit:
        eps = 1.0 / limit
        logger.warning(f"eps_n above 1/(n C0 C_n) with C_n={c_n:.3g}; re-mollifying with eps_n={eps:.3g}")
        smooth = mollify(coeffs, n, eps, plan)
        lower, upper = pair(smooth)
        remollified = True

    result = NodalResult(
        t=float(t),
        x=tuple(float(v) for v in pt[0]),
        n=int(n),
        u_lower=float(lower.value(t, pt)[0]),
        u_upper=float(upper.value(t, pt)[0]),
        eps_n=eps,
        c_n=c_n,
        remollified=remollified,
    )
    return result, smooth


def nodal_bounds(
    coeffs: CoefficientSet,
    grid: TimeSpaceGrid,
    t: float,
    x: Array | float,
    n: int,
    eps_n: Optional[float] = None,
    opts: Optional[PicardOptions] = None,
    plan: Optional[ProbePlan] = None,
) -> NodalResult:
    """Mollify at index n and solve the alpha = 0 and alpha = 1 shifted problems.

    eps_n defaults to 1/n. When eps_n exceeds 1/(n C0 C_n), with C_n the largest
    second difference of the upper solution, the coefficients are mollified once
    more at the tighter tolerance and the result is flagged.

    Raises:
        DomainError: (t, x) outside the grid.
    """
    result, _ = _bounds(coeffs, grid, t, x, n, eps_n, opts, plan)
    logger.info(f"Nodal interval for {coeffs.name} at t={t}, n={n}: [{result.u_lower:.6g}, {result.u_upper:.6g}]")
    return result


def nodal_select(
    coeffs: CoefficientSet,
    grid: TimeSpaceGrid,
    t: float,
    x: Array | float,
    y_target: float,
    n: int,
    tol: float = BISECTION_TOL,
    max_iter: int = BISECTION_MAX,
    eps_n: Optional[float] = None,
    opts: Optional[PicardOptions] = None,
    plan: Optional[ProbePlan] = None,
) -> NodalResult:
    """Bisect alpha in [0, 1] until the interpolated solution at (t, x) hits y_target.

    Raises:
        OutOfNodalSetError: y_target lies outside [u_lower, u_upper].
    """
    bounds, smooth = _bounds(coeffs, grid, t, x, n, eps_n, opts, plan)
    if not bounds.contains(y_target, tol):
        raise OutOfNodalSetError(
            f"{y_target} outside [{bounds.u_lower}, {bounds.u_upper}]",
            y_target=y_target,
            u_lower=bounds.u_lower,
            u_upper=bounds.u_upper,
        )
    pt = _point(grid, t, x)
    if abs(bounds.u_lower - y_target) <= tol:
        return _selected(bounds, 0.0, y_target, 0)
    if abs(bounds.u_upper - y_target) <= tol:
        return _selected(bounds, 1.0, y_target, 0)

    lo, hi, mid = 0.0, 1.0, 0.5
    used = 0
    for used in range(1, max_iter + 1):
        mid = 0.5 * (lo + hi)
        value = float(solve_at_alpha(smooth, grid, n, mid, opts).value(t, pt)[0])
        if abs(value - y_target) <= tol:
            break
        if value < y_target:
            lo = mid
        else:
            hi = mid
    logger.info(f"nodal_select reached alpha={mid:.8f} after {used} solves")
    return _selected(bounds, mid, y_target, used)


def _selected(bounds: NodalResult, alpha: float, y: float, iterations: int) -> NodalResult:
    return replace(bounds, alpha_star=alpha, y_target=y, iterations=iterations)


def nodal_family(
    coeffs: CoefficientSet,
    grid: TimeSpaceGrid,
    n: int,
    alphas: Sequence[float],
    eps_n: Optional[float] = None,
    opts: Optional[PicardOptions] = None,
    plan: Optional[ProbePlan] = None,
) -> list[DecouplingField]:
    """Interpolated solutions for several alpha values sharing one mollification."""
    smooth = mollify(coeffs, n, 1.0 / n if eps_n is None else eps_n, plan)
    return [solve_at_alpha(smooth, grid, n, float(a), opts) for a in alphas]
