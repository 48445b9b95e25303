#!filepath: src/weakfbsde_app/pde/quasilinear.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Literal, Optional

import numpy as np
import scipy.sparse as sp
from scipy.linalg import solve_banded
from scipy.sparse.linalg import spsolve

from weakfbsde_app.errors import (
    ConfigurationError,
    DomainError,
    EllipticityError,
    GridError,
    PicardDivergenceError,
    SingularSystemError,
)
from weakfbsde_app.pde.field import DecouplingField, central_gradient, hessian
from weakfbsde_app.pde.grid import TimeSpaceGrid, require_pde_dim
from weakfbsde_app.problem.coefficients import CoefficientSet
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray
BoundaryMode = Literal["compatible", "cutoff"]

CUTOFF_INNER = 0.9


@dataclass(frozen=True, slots=True)
class PicardOptions:
    """Controls of the backward march.

    Attributes:
        picard_tol: Sup-change at which the frozen-coefficient iteration stops.
        picard_max: Iteration cap per time step.
        damping: Relaxation weight of the new iterate; falls to 0.5 on oscillation.
        theta: Implicitness, 1 for backward Euler and 1/2 for Crank-Nicolson.
        boundary: Lateral boundary data, "compatible" or "cutoff".
    """

    picard_tol: float = 1e-10
    picard_max: int = 50
    damping: float = 1.0
    theta: float = 1.0
    boundary: BoundaryMode = "compatible"

    def __post_init__(self) -> None:
        if not 0.5 <= self.theta <= 1.0:
            raise DomainError(f"theta must lie in [1/2, 1], got {self.theta}", theta=self.theta)
        if not 0.0 < self.damping <= 1.0:
            raise DomainError(f"damping must lie in (0, 1], got {self.damping}", damping=self.damping)
        if self.boundary not in ("compatible", "cutoff"):
            raise ConfigurationError(f"unknown boundary mode {self.boundary!r}", boundary=self.boundary)


def diffusion_matrix(sigma: Array) -> Array:
    return np.einsum("nik,njk->nij", sigma, sigma)


def apply_operator(a: Array, u_slice: Array, grid: TimeSpaceGrid) -> Array:
    """1/2 a : D^2 u at every node, shape (N,)."""
    d = grid.dim
    h = hessian(u_slice, grid).reshape(-1, d, d)
    return 0.5 * np.einsum("nij,nij->n", a, h)


def quintic_cutoff(grid: TimeSpaceGrid, x: Array) -> Array:
    """Product over axes of a C^2 ramp equal to 1 on the inner 90% and 0 on the box faces."""
    out = np.ones(x.shape[0])
    for i, (lo, hi) in enumerate(zip(grid.lo, grid.hi)):
        c, r = 0.5 * (lo + hi), 0.5 * (hi - lo)
        rel = np.abs(x[:, i] - c) / r
        s = np.clip((rel - CUTOFF_INNER) / (1.0 - CUTOFF_INNER), 0.0, 1.0)
        out *= 1.0 - s**3 * (10.0 - 15.0 * s + 6.0 * s**2)
    return out


def _terminal_derivatives(g: Callable[[Array], Array], x: Array, dx: tuple[float, ...]) -> tuple[Array, Array]:
    """Central-difference gradient and Hessian of g at x with the grid spacing."""
    n, d = x.shape
    grad = np.empty((n, d))
    hess = np.empty((n, d, d))
    g0 = g(x)
    for i in range(d):
        e = np.zeros(d)
        e[i] = dx[i]
        gp, gm = g(x + e), g(x - e)
        grad[:, i] = (gp - gm) / (2.0 * dx[i])
        hess[:, i, i] = (gp - 2.0 * g0 + gm) / dx[i] ** 2
        for j in range(i + 1, d):
            f_ = np.zeros(d)
            f_[j] = dx[j]
            mixed = (g(x + e + f_) - g(x + e - f_) - g(x - e + f_) + g(x - e - f_)) / (4.0 * dx[i] * dx[j])
            hess[:, i, j] = mixed
            hess[:, j, i] = mixed
    return grad, hess


def boundary_values(coeffs: CoefficientSet, grid: TimeSpaceGrid, mode: BoundaryMode) -> Callable[[float], Array]:
    """Lateral Dirichlet data t -> values at the boundary nodes (C order)."""
    pts = grid.points()[grid.boundary_mask().reshape(-1)]
    T = grid.T
    g = coeffs.terminal(pts)
    if mode == "compatible":
        grad, hess = _terminal_derivatives(coeffs.terminal, pts, grid.dx)
        vals = coeffs.evaluate(T, pts, g, grad)
        rate = 0.5 * np.einsum("nij,nij->n", diffusion_matrix(vals.sigma), hess) + vals.f
        return lambda t: g + (T - t) * rate
    cut = quintic_cutoff(grid, pts)
    n = pts.shape[0]
    f00 = coeffs.evaluate(T, pts, np.zeros(n), np.zeros((n, grid.dim))).f
    return lambda t: g * cut + (T - t) * f00


def solve_tridiagonal(scale: Array, rhs: Array, interior: Array, advect: Optional[Array] = None) -> Array:
    """Solve u - scale (u[i+1] - 2u[i] + u[i-1]) - advect (u[i+1] - u[i-1]) = rhs.

    Rows off the interior are identity rows.
    """
    c = np.where(interior, scale, 0.0)
    e = np.zeros_like(c) if advect is None else np.where(interior, advect, 0.0)
    n = c.size
    ab = np.zeros((3, n))
    ab[1] = 1.0 + 2.0 * c
    ab[0, 1:] = -(c[:-1] + e[:-1])
    ab[2, :-1] = -(c[1:] - e[1:])
    try:
        out = solve_banded((1, 1), ab, rhs)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise SingularSystemError(f"banded solve failed: {exc}") from exc
    return out


def assemble_2d(a: Array, grid: TimeSpaceGrid, scale: float) -> sp.csr_matrix:
    """I - scale * 1/2 a : D^2 on interior rows, identity on boundary rows."""
    nx, ny = grid.shape
    hx, hy = grid.dx
    idx = np.arange(nx * ny).reshape(nx, ny)
    inner = idx[1:-1, 1:-1].reshape(-1)
    a = a.reshape(nx * ny, 2, 2)[inner]
    cxx = scale * 0.5 * a[:, 0, 0] / hx**2
    cyy = scale * 0.5 * a[:, 1, 1] / hy**2
    cxy = scale * a[:, 0, 1] / (4.0 * hx * hy)
    i, j = np.divmod(inner, ny)

    rows = [inner, inner, inner, inner, inner, inner, inner, inner, inner]
    cols = [
        inner,
        idx[i + 1, j],
        idx[i - 1, j],
        idx[i, j + 1],
        idx[i, j - 1],
        idx[i + 1, j + 1],
        idx[i - 1, j - 1],
        idx[i + 1, j - 1],
        idx[i - 1, j + 1],
    ]
    vals = [1.0 + 2.0 * cxx + 2.0 * cyy, -cxx, -cxx, -cyy, -cyy, -cxy, -cxy, cxy, cxy]
    boundary = np.setdiff1d(np.arange(nx * ny), inner)
    rows.append(boundary)
    cols.append(boundary)
    vals.append(np.ones(boundary.size))
    return sp.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(nx * ny, nx * ny)
    ).tocsr()


def implicit_solve(a: Array, rhs: Array, grid: TimeSpaceGrid, scale: float, interior: Array) -> Array:
    """Solve (I - scale * 1/2 a : D^2) u = rhs; boundary rows keep rhs."""
    if grid.dim == 1:
        out = solve_tridiagonal(scale * 0.5 * a[:, 0, 0] / grid.dx[0] ** 2, rhs, interior)
    else:
        try:
            out = spsolve(assemble_2d(a, grid, scale), rhs)
        except RuntimeError as exc:
            raise SingularSystemError(f"sparse solve failed: {exc}") from exc
    if not np.all(np.isfinite(out)):
        raise SingularSystemError("linear solve produced non-finite values")
    return out


def _coefficients_at(coeffs: CoefficientSet, t: float, pts: Array, w: Array, grid: TimeSpaceGrid) -> tuple[Array, Array]:
    dw = central_gradient(w.reshape(grid.shape), grid).reshape(-1, grid.dim)
    vals = coeffs.evaluate(t, pts, w, dw)
    return diffusion_matrix(vals.sigma), vals.f


def _check_elliptic(a: Array, step: int, pts: Array) -> None:
    smallest = np.linalg.eigvalsh(a)[:, 0]
    i = int(np.argmin(smallest))
    if smallest[i] <= 0.0:
        raise EllipticityError(
            f"sigma sigma^T degenerate at node {i} (x={pts[i].tolist()}) in step {step}",
            node=i,
            x=pts[i].tolist(),
            step=step,
        )


def solve_quasilinear(
    coeffs: CoefficientSet,
    grid: TimeSpaceGrid,
    opts: Optional[PicardOptions] = None,
) -> DecouplingField:
    """March d_t u + 1/2 sigma sigma^T(t, x, u, Du) : D^2 u + f(t, x, u, Du) = 0 back from u(T) = g.

    Each step freezes (u, Du) inside sigma and f at the previous Picard iterate and
    solves one linear system; problems whose sigma and f ignore (y, z) take a single solve.

    Args:
        coeffs: Problem coefficients; the drift does not enter the equation.
        grid: Grid with d <= 2.
        opts: Picard and boundary options.

    Returns:
        DecouplingField: u, its central gradient and solver statistics.

    Raises:
        PicardDivergenceError: Picard cap reached; carries the last sup-change.
        SingularSystemError: A linear solve failed.
        EllipticityError: sigma sigma^T degenerate at a node.
    """
    opts = opts or PicardOptions()
    require_pde_dim(grid)
    if coeffs.dim_x != grid.dim:
        raise GridError(f"grid has d={grid.dim} but problem has d={coeffs.dim_x}", dim=grid.dim)
    if coeffs.path_dependent_drift is not None:
        raise ConfigurationError("path-dependent problems have no Markovian decoupling PDE", problem=coeffs.name)

    pts = grid.points()
    interior = ~grid.boundary_mask().reshape(-1)
    boundary = ~interior
    bvals = boundary_values(coeffs, grid, opts.boundary)
    times = grid.times
    dt = grid.dt
    theta = opts.theta

    u = np.empty((grid.n_t + 1, pts.shape[0]))
    u[-1] = coeffs.terminal(pts)
    max_iters = 0
    total_iters = 0
    last_change = 0.0

    for k in range(grid.n_t - 1, -1, -1):
        t, t_next = times[k], times[k + 1]
        known = u[k + 1]
        rhs0 = known.copy()
        if theta < 1.0:
            a_next, f_next = _coefficients_at(coeffs, t_next, pts, known, grid)
            rhs0 += dt * (1.0 - theta) * (apply_operator(a_next, known.reshape(grid.shape), grid) + f_next)

        w = known.copy()
        damping = opts.damping
        prev_change = np.inf
        iters = 0
        while True:
            iters += 1
            a, f = _coefficients_at(coeffs, t, pts, w, grid)
            if iters == 1:
                _check_elliptic(a, k, pts)
            rhs = rhs0 + dt * theta * f
            rhs[boundary] = bvals(t)
            new = implicit_solve(a, rhs, grid, theta * dt, interior)
            if coeffs.linear:
                w = new
                last_change = 0.0
                break
            nxt = (1.0 - damping) * w + damping * new
            change = float(np.max(np.abs(nxt - w)))
            w = nxt
            last_change = change
            logger.debug(f"step {k} picard {iters}: change {change:.3e} damping {damping}")
            if change <= opts.picard_tol:
                break
            if iters >= opts.picard_max:
                raise PicardDivergenceError(
                    f"Picard did not converge at step {k} after {iters} iterations (change {change:.3e})",
                    residual=change,
                    step=k,
                )
            if change > prev_change and damping > 0.5:
                damping = 0.5
                logger.warning(f"Picard oscillation at step {k}; damping reduced to 0.5")
            prev_change = change
        u[k] = w
        max_iters = max(max_iters, iters)
        total_iters += iters

    meta = {
        "problem": coeffs.name,
        "picard_iters_used": max_iters,
        "picard_iters_total": total_iters,
        "residual_sup": last_change,
        "boundary": opts.boundary,
        "theta": theta,
        "linear": coeffs.linear,
    }
    logger.info(
        f"Solved {coeffs.name} on n_t={grid.n_t}, n_x={grid.n_x}: max Picard iterations {max_iters}"
    )
    return DecouplingField.from_values(grid, u.reshape((grid.n_t + 1,) + grid.shape), meta)
