#!filepath: src/weakfbsde_app/pde/field.py
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Mapping, Optional

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from weakfbsde_app.errors import ConfigurationError
from weakfbsde_app.pde.grid import TimeSpaceGrid
from weakfbsde_app.records import read_columnar, write_columnar

Array = np.ndarray


def central_gradient(u: Array, grid: TimeSpaceGrid) -> Array:
    """Central differences in space for every time slice; shape (..., *n_x, d).

    One-sided second-order differences at the box edges.
    """
    axes = tuple(range(u.ndim - grid.dim, u.ndim))
    parts = np.gradient(u, *grid.dx, axis=axes, edge_order=2)
    if grid.dim == 1:
        parts = [parts]
    return np.stack(parts, axis=-1)


def second_difference(u: Array, dx: float, axis: int) -> Array:
    """(u[i+1] - 2u[i] + u[i-1]) / dx^2 along axis, edge rows copied from their neighbour."""
    u = np.moveaxis(np.asarray(u, dtype=float), axis, 0)
    out = np.empty_like(u)
    out[1:-1] = (u[2:] - 2.0 * u[1:-1] + u[:-2]) / dx**2
    out[0] = out[1]
    out[-1] = out[-2]
    return np.moveaxis(out, 0, axis)


def hessian(u_slice: Array, grid: TimeSpaceGrid) -> Array:
    """Hessian of one time slice, shape (*n_x, d, d)."""
    d = grid.dim
    out = np.empty(u_slice.shape + (d, d))
    grad = central_gradient(u_slice, grid)
    for i in range(d):
        out[..., i, i] = second_difference(u_slice, grid.dx[i], axis=i)
        for j in range(i + 1, d):
            mixed = np.gradient(grad[..., i], grid.dx[j], axis=j, edge_order=2)
            out[..., i, j] = mixed
            out[..., j, i] = mixed
    return out


@dataclass(frozen=True)
class DecouplingField:
    """Grid samples of u and its space gradient.

    Attributes:
        grid: Grid the field lives on.
        u: Values, shape (n_t + 1, *n_x).
        du: Central-difference gradient of u, shape (n_t + 1, *n_x, d).
        meta: Solver statistics (Picard iterations, residuals, boundary mode).
        control: Argmax control field for HJB solves, same shape as u.
    """

    grid: TimeSpaceGrid
    u: Array
    du: Array
    meta: Mapping[str, Any] = field(default_factory=dict)
    control: Optional[Array] = None

    @classmethod
    def from_values(
        cls,
        grid: TimeSpaceGrid,
        u: Array,
        meta: Optional[Mapping[str, Any]] = None,
        control: Optional[Array] = None,
    ) -> DecouplingField:
        u = np.asarray(u, dtype=float)
        expected = (grid.n_t + 1,) + grid.shape
        if u.shape != expected:
            raise ConfigurationError(f"field shape {u.shape} does not match grid {expected}")
        return cls(grid=grid, u=u, du=central_gradient(u, grid), meta=dict(meta or {}), control=control)

    @classmethod
    def from_function(cls, grid: TimeSpaceGrid, fn, meta: Optional[Mapping[str, Any]] = None) -> DecouplingField:
        """Tabulate an analytic u(t, x) with x of shape (N, d)."""
        pts = grid.points()
        u = np.stack([np.asarray(fn(t, pts), dtype=float).reshape(grid.shape) for t in grid.times])
        return cls.from_values(grid, u, meta)

    @cached_property
    def _u_interp(self) -> RegularGridInterpolator:
        return RegularGridInterpolator((self.grid.times, *self.grid.axes), self.u, method="linear")

    @cached_property
    def _du_interp(self) -> RegularGridInterpolator:
        return RegularGridInterpolator((self.grid.times, *self.grid.axes), self.du, method="linear")

    @cached_property
    def _control_interp(self) -> Optional[RegularGridInterpolator]:
        if self.control is None:
            return None
        return RegularGridInterpolator((self.grid.times, *self.grid.axes), self.control, method="linear")

    def _query(self, t: float, x: Array) -> Array:
        x = np.asarray(x, dtype=float).reshape(-1, self.grid.dim)
        tt = np.full((x.shape[0], 1), min(max(float(t), 0.0), self.grid.T))
        return np.hstack([tt, self.grid.clip(x)])

    def value(self, t: float, x: Array) -> Array:
        """Bilinear (t, x) interpolation of u, shape (n,)."""
        return self._u_interp(self._query(t, x))

    def gradient(self, t: float, x: Array) -> Array:
        """Bilinear interpolation of the stored du, shape (n, d)."""
        return self._du_interp(self._query(t, x)).reshape(-1, self.grid.dim)

    def argmax_control(self, t: float, x: Array) -> Array:
        if self._control_interp is None:
            raise ConfigurationError("field carries no control")
        return self._control_interp(self._query(t, x))

    def hessian_at(self, k: int) -> Array:
        return hessian(self.u[k], self.grid)

    def inside(self, x: Array) -> Array:
        return self.grid.contains(np.asarray(x, dtype=float).reshape(-1, self.grid.dim))

    def save(self, path: Path) -> Path:
        """Columnar file: t-index, x-index per dimension, u, du per dimension (control if present)."""
        g = self.grid
        d = g.dim
        t_idx, *x_idx = np.meshgrid(np.arange(g.n_t + 1), *[np.arange(n) for n in g.n_x], indexing="ij")
        cols = [t_idx.reshape(-1)] + [ix.reshape(-1) for ix in x_idx] + [self.u.reshape(-1)]
        cols += [self.du[..., i].reshape(-1) for i in range(d)]
        names = ["t_index"] + [f"x_index_{i}" for i in range(d)] + ["u"] + [f"du_{i}" for i in range(d)]
        if self.control is not None:
            cols.append(self.control.reshape(-1))
            names.append("control")
        header = {"kind": "decoupling-field", "grid": g.to_dict(), "meta": dict(self.meta)}
        return write_columnar(path, header, names, np.stack(cols, axis=1))

    @classmethod
    def load(cls, path: Path) -> DecouplingField:
        data = read_columnar(path)
        if data.header.get("kind") != "decoupling-field":
            raise ConfigurationError(f"{path} is not a field file", path=str(path))
        grid = TimeSpaceGrid.from_dict(data.header["grid"])
        shape = (grid.n_t + 1,) + grid.shape
        u = data.column("u").reshape(shape)
        du = np.stack([data.column(f"du_{i}").reshape(shape) for i in range(grid.dim)], axis=-1)
        control = data.column("control").reshape(shape) if "control" in data.columns else None
        return cls(grid=grid, u=u, du=du, meta=data.header.get("meta", {}), control=control)
