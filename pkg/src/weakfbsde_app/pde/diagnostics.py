#!filepath: src/weakfbsde_app/pde/diagnostics.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from weakfbsde_app.errors import DomainError
from weakfbsde_app.pde.field import DecouplingField, hessian
from weakfbsde_app.pde.grid import TimeSpaceGrid
from weakfbsde_app.pde.quasilinear import PicardOptions, diffusion_matrix, solve_quasilinear
from weakfbsde_app.problem.coefficients import CoefficientSet
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray
Oracle = Callable[[float, Array], Array]


@dataclass(frozen=True, slots=True)
class ResidualReport:
    sup_residual: float
    l2_residual: float
    per_node: Array


@dataclass(frozen=True, slots=True)
class RegularityReport:
    """Sup norms and Hoelder quotients of a solved field.

    Attributes:
        sup_u: max |u|.
        sup_du: max |du|.
        holder_t_half: max |u(t1, x) - u(t2, x)| / |t1 - t2|^(1/2).
        holder_alpha_du: max |du(p1) - du(p2)| / (|x1 - x2|^alpha + |t1 - t2|^(alpha/2)) for t <= T - delta.
        alpha: Hoelder exponent used.
        delta: Distance to the horizon excluded from the gradient quotient.
        pairs_used: Number of pairs behind each quotient.
        sampled: True when pairs were sampled rather than enumerated.
    """

    sup_u: float
    sup_du: float
    holder_t_half: float
    holder_alpha_du: float
    alpha: float
    delta: float
    pairs_used: int
    sampled: bool


@dataclass(frozen=True, slots=True)
class RefinementStudy:
    grids: Tuple[TimeSpaceGrid, ...]
    errors: Tuple[float, ...]

    @property
    def ratios(self) -> Tuple[float, ...]:
        return tuple(a / b if b > 0 else float("inf") for a, b in zip(self.errors, self.errors[1:]))


def _operator(field: DecouplingField, coeffs: CoefficientSet, k: int, pts: Array) -> Array:
    grid = field.grid
    d = grid.dim
    u = field.u[k].reshape(-1)
    du = field.du[k].reshape(-1, d)
    vals = coeffs.evaluate(grid.times[k], pts, u, du)
    h = hessian(field.u[k], grid).reshape(-1, d, d)
    return 0.5 * np.einsum("nij,nij->n", diffusion_matrix(vals.sigma), h) + vals.f


def pde_residual(
    field: DecouplingField,
    coeffs: CoefficientSet,
    inner: float = 0.5,
    theta: float = 1.0,
) -> ResidualReport:
    """Residual of d_t u + 1/2 sigma sigma^T : D^2 u + f at interior nodes.

    The time derivative is the forward difference (u[k+1] - u[k]) / dt; space terms are
    taken at level k, or blended with level k+1 when theta < 1. Norms are over the
    centred sub-box holding `inner` of each side.
    """
    grid = field.grid
    pts = grid.points()
    mask = (grid.inner_mask(inner) & ~grid.boundary_mask()).reshape(-1)
    ops = [_operator(field, coeffs, k, pts) for k in range(grid.n_t + 1)]
    res = np.zeros((grid.n_t, pts.shape[0]))
    for k in range(grid.n_t):
        dudt = (field.u[k + 1].reshape(-1) - field.u[k].reshape(-1)) / grid.dt
        res[k] = dudt + theta * ops[k] + (1.0 - theta) * ops[k + 1]
    res[:, ~mask] = 0.0
    cell = grid.dt * float(np.prod(grid.dx))
    sup = float(np.max(np.abs(res[:, mask]))) if mask.any() else 0.0
    l2 = float(np.sqrt(cell * np.sum(res[:, mask] ** 2)))
    return ResidualReport(sup_residual=sup, l2_residual=l2, per_node=res.reshape((grid.n_t,) + grid.shape))


def _pairs(count: int, max_pairs: int, rng: np.random.Generator) -> Tuple[Array, Array, bool]:
    total = count * (count - 1) // 2
    if total <= max_pairs:
        i, j = np.triu_indices(count, k=1)
        return i, j, False
    i = rng.integers(0, count, size=max_pairs)
    j = rng.integers(0, count - 1, size=max_pairs)
    j = np.where(j >= i, j + 1, j)
    return i, j, True


def regularity_estimates(
    field: DecouplingField,
    alpha: float,
    delta: float,
    max_pairs: int = 10**6,
    seed: int = 0,
) -> RegularityReport:
    """Sup norms and Hoelder quotients over grid pairs, enumerated or seeded-sampled."""
    grid = field.grid
    if not 0.0 < delta < grid.T:
        raise DomainError(f"delta must lie in (0, T), got {delta}", delta=delta)
    if alpha <= 0:
        raise DomainError(f"alpha must be positive, got {alpha}", alpha=alpha)
    rng = np.random.default_rng(seed)
    times = grid.times
    u = field.u.reshape(grid.n_t + 1, -1)
    du = field.du.reshape(grid.n_t + 1, -1, grid.dim)
    n_nodes = u.shape[1]

    sup_u = float(np.max(np.abs(u)))
    sup_du = float(np.max(np.linalg.norm(du, axis=-1)))

    # time quotient of u at fixed x
    time_pairs = (grid.n_t + 1) * grid.n_t // 2
    sampled = False
    if time_pairs * n_nodes <= max_pairs:
        k1, k2 = np.triu_indices(grid.n_t + 1, k=1)
        diff = np.abs(u[k2] - u[k1])
        holder_t = float(np.max(diff / np.sqrt(times[k2] - times[k1])[:, None]))
        t_count = diff.size
    else:
        sampled = True
        k1, k2, _ = _pairs(grid.n_t + 1, max_pairs, rng)
        node = rng.integers(0, n_nodes, size=k1.size)
        diff = np.abs(u[k2, node] - u[k1, node])
        holder_t = float(np.max(diff / np.sqrt(np.abs(times[k2] - times[k1]))))
        t_count = diff.size

    # gradient quotient over space-time pairs away from T
    keep = int(np.searchsorted(times, grid.T - delta, side="right"))
    pts = grid.points()
    flat_t = np.repeat(times[:keep], n_nodes)
    flat_x = np.tile(pts, (keep, 1))
    flat_du = du[:keep].reshape(-1, grid.dim)
    i, j, sampled_x = _pairs(flat_t.size, max_pairs, rng)
    num = np.linalg.norm(flat_du[i] - flat_du[j], axis=1)
    den = np.linalg.norm(flat_x[i] - flat_x[j], axis=1) ** alpha + np.abs(flat_t[i] - flat_t[j]) ** (alpha / 2.0)
    holder_du = float(np.max(num / den)) if num.size else 0.0

    report = RegularityReport(
        sup_u=sup_u,
        sup_du=sup_du,
        holder_t_half=holder_t,
        holder_alpha_du=holder_du,
        alpha=alpha,
        delta=delta,
        pairs_used=int(max(t_count, num.size)),
        sampled=sampled or sampled_x,
    )
    logger.info(
        f"Regularity: sup|u|={sup_u:.4g}, sup|du|={sup_du:.4g}, t-1/2 quotient={holder_t:.4g}, du quotient={holder_du:.4g}"
    )
    return report


def grid_refinement_study(
    coeffs: CoefficientSet,
    grids: Sequence[TimeSpaceGrid],
    oracle: Oracle,
    opts: Optional[PicardOptions] = None,
    inner: float = 0.5,
) -> RefinementStudy:
    """Sup error at t = 0 over the inner box against an analytic u(t, x), per grid."""
    errors = []
    for grid in grids:
        field = solve_quasilinear(coeffs, grid, opts)
        pts = grid.points()
        mask = grid.inner_mask(inner).reshape(-1)
        exact = np.asarray(oracle(0.0, pts[mask]), dtype=float)
        err = float(np.max(np.abs(field.u[0].reshape(-1)[mask] - exact)))
        logger.info(f"Refinement n_t={grid.n_t}, n_x={grid.n_x}: sup error {err:.3e}")
        errors.append(err)
    return RefinementStudy(grids=tuple(grids), errors=tuple(errors))
