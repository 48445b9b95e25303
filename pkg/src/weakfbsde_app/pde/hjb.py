#!filepath: src/weakfbsde_app/pde/hjb.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from weakfbsde_app.control.hamiltonians import hamiltonian_H
from weakfbsde_app.control.spec import HamiltonianSpec
from weakfbsde_app.errors import EllipticityError, GridError, PolicyIterationError
from weakfbsde_app.pde.field import DecouplingField, second_difference
from weakfbsde_app.pde.grid import TimeSpaceGrid
from weakfbsde_app.pde.quasilinear import solve_tridiagonal
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray


@dataclass(frozen=True, slots=True)
class HJBOptions:
    policy_max: int = 30
    policy_tol: float = 1e-8
    value_tol: float = 1e-12


def _derivatives(w: Array, dx: float) -> tuple[Array, Array]:
    return np.gradient(w, dx, edge_order=2), second_difference(w, dx, axis=0)


def solve_hjb(
    spec: HamiltonianSpec,
    grid: TimeSpaceGrid,
    opts: Optional[HJBOptions] = None,
) -> DecouplingField:
    """Backward implicit sweep for d_t u + H(t, D u, D^2 u) = 0 with policy iteration.

    Each step alternates maximisation of the Hamiltonian at the current iterate with
    one linear solve under the frozen argmax. Lateral nodes are held at g.

    Args:
        spec: Control problem in one space dimension.
        grid: Grid with d = 1.
        opts: Policy-iteration stopping rules.

    Returns:
        DecouplingField: u, du and the argmax control field.

    Raises:
        PolicyIterationError: Neither the policy nor the value settled within policy_max rounds.
        EllipticityError: A frozen control makes sigma vanish.
    """
    opts = opts or HJBOptions()
    if grid.dim != 1:
        raise GridError(f"the HJB solver is one-dimensional, got d={grid.dim}", dim=grid.dim)

    axis = grid.axes[0]
    dx = grid.dx[0]
    dt = grid.dt
    times = grid.times
    interior = ~grid.boundary_mask()
    boundary = ~interior
    g = spec.terminal_on_axis(axis)

    u = np.empty((grid.n_t + 1, axis.size))
    control = np.empty_like(u)
    u[-1] = g
    z, gam = _derivatives(g, dx)
    control[-1] = hamiltonian_H(spec, grid.T, z, gam, x=axis)[1]
    rounds_max = 0

    for k in range(grid.n_t - 1, -1, -1):
        t = times[k]
        w = u[k + 1].copy()
        policy: Optional[Array] = None
        change = np.inf
        for rounds in range(1, opts.policy_max + 1):
            z, gam = _derivatives(w, dx)
            _, alpha = hamiltonian_H(spec, t, z, gam, x=axis)
            if policy is not None and float(np.max(np.abs(alpha - policy))) <= opts.policy_tol:
                break
            policy = alpha
            sig = np.asarray(spec.sigma_of(t, alpha), dtype=float)
            if np.any(sig[interior] == 0.0):
                i = int(np.flatnonzero(interior & (sig == 0.0))[0])
                raise EllipticityError(f"sigma vanishes under control {alpha[i]} at x={axis[i]}", step=k, x=float(axis[i]))
            b = np.asarray(spec.b_of(t, alpha), dtype=float)
            f = np.asarray(spec.f_of(t, axis, alpha), dtype=float)
            rhs = u[k + 1] + dt * f
            rhs[boundary] = g[boundary]
            new = solve_tridiagonal(dt * 0.5 * sig**2 / dx**2, rhs, interior, advect=dt * b / (2.0 * dx))
            change = float(np.max(np.abs(new - w)))
            w = new
            logger.debug(f"hjb step {k} round {rounds}: value change {change:.3e}")
            if change <= opts.value_tol:
                break
        else:
            raise PolicyIterationError(
                f"policy iteration did not settle at step {k} after {opts.policy_max} rounds",
                step=k,
                residual=change,
            )
        u[k] = w
        control[k] = policy
        rounds_max = max(rounds_max, rounds)

    logger.info(f"Solved HJB for {spec.name} on n_t={grid.n_t}, n_x={grid.n_x}: max policy rounds {rounds_max}")
    meta = {
        "problem": spec.name,
        "policy_rounds_used": rounds_max,
        "control_set": [spec.control_lo, spec.control_hi],
        "n_controls": spec.n_controls,
    }
    return DecouplingField.from_values(grid, u, meta, control=control)
