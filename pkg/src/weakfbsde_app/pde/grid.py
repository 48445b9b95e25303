#!filepath: src/weakfbsde_app/pde/grid.py
from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Mapping, Sequence, Tuple

import numpy as np

from weakfbsde_app.errors import GridError

Array = np.ndarray

MAX_PDE_DIM = 2


@dataclass(frozen=True, slots=True)
class TimeSpaceGrid:
    """Uniform grid on [0, T] x prod_i [lo_i, hi_i].

    Attributes:
        T: Horizon.
        n_t: Number of time steps.
        lo: Lower box corner, one entry per dimension.
        hi: Upper box corner.
        n_x: Node counts per dimension (endpoints included).
    """

    T: float
    n_t: int
    lo: Tuple[float, ...]
    hi: Tuple[float, ...]
    n_x: Tuple[int, ...]

    def __post_init__(self) -> None:
        if self.T <= 0:
            raise GridError(f"T must be positive, got {self.T}", T=self.T)
        if self.n_t < 1:
            raise GridError(f"n_t must be >= 1, got {self.n_t}", n_t=self.n_t)
        if not (len(self.lo) == len(self.hi) == len(self.n_x) >= 1):
            raise GridError("lo, hi and n_x must have one entry per dimension")
        for lo, hi, n in zip(self.lo, self.hi, self.n_x):
            if n < 3:
                raise GridError(f"n_x must be >= 3 per dimension, got {n}", n_x=self.n_x)
            if hi <= lo:
                raise GridError(f"empty box [{lo}, {hi}]", lo=lo, hi=hi)

    @classmethod
    def uniform(cls, T: float, n_t: int, n_x: int, lo: float, hi: float, dim: int = 1) -> TimeSpaceGrid:
        return cls(T=float(T), n_t=int(n_t), lo=(float(lo),) * dim, hi=(float(hi),) * dim, n_x=(int(n_x),) * dim)

    @property
    def dim(self) -> int:
        return len(self.n_x)

    @property
    def dt(self) -> float:
        return self.T / self.n_t

    @property
    def dx(self) -> Tuple[float, ...]:
        return tuple((h - l) / (n - 1) for l, h, n in zip(self.lo, self.hi, self.n_x))

    @property
    def times(self) -> Array:
        return np.linspace(0.0, self.T, self.n_t + 1)

    @property
    def axes(self) -> Tuple[Array, ...]:
        return tuple(np.linspace(l, h, n) for l, h, n in zip(self.lo, self.hi, self.n_x))

    @property
    def shape(self) -> Tuple[int, ...]:
        return tuple(self.n_x)

    def points(self) -> Array:
        """All spatial nodes as an (N, d) array in C order."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.reshape(-1) for m in mesh], axis=1)

    def boundary_mask(self) -> Array:
        mask = np.zeros(self.shape, dtype=bool)
        for axis in range(self.dim):
            idx = [slice(None)] * self.dim
            idx[axis] = 0
            mask[tuple(idx)] = True
            idx[axis] = -1
            mask[tuple(idx)] = True
        return mask

    def inner_mask(self, fraction: float = 0.5) -> Array:
        """Nodes in the centred sub-box holding `fraction` of each side."""
        masks = []
        for axis, l, h in zip(self.axes, self.lo, self.hi):
            c, r = 0.5 * (l + h), 0.5 * fraction * (h - l)
            masks.append(np.abs(axis - c) <= r + 1e-12 * (h - l))
        mesh = np.meshgrid(*masks, indexing="ij")
        return np.logical_and.reduce(mesh)

    def clip(self, x: Array) -> Array:
        return np.clip(x, np.asarray(self.lo), np.asarray(self.hi))

    def contains(self, x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        return np.all((x >= np.asarray(self.lo)) & (x <= np.asarray(self.hi)), axis=-1)

    def time_index(self, t: float) -> int:
        k = int(round(t / self.dt))
        if k < 0 or k > self.n_t or abs(k * self.dt - t) > 1e-9 * max(self.T, 1.0):
            raise GridError(f"t={t} is not a grid time", t=t)
        return k

    def refine(self, factor: int = 2) -> TimeSpaceGrid:
        """Halve dt and dx (factor 2) keeping the box."""
        return TimeSpaceGrid(
            T=self.T,
            n_t=self.n_t * factor,
            lo=self.lo,
            hi=self.hi,
            n_x=tuple((n - 1) * factor + 1 for n in self.n_x),
        )

    def to_dict(self) -> dict[str, Any]:
        return {"T": self.T, "n_t": self.n_t, "lo": list(self.lo), "hi": list(self.hi), "n_x": list(self.n_x)}

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> TimeSpaceGrid:
        return cls(
            T=float(data["T"]),
            n_t=int(data["n_t"]),
            lo=tuple(float(v) for v in data["lo"]),
            hi=tuple(float(v) for v in data["hi"]),
            n_x=tuple(int(v) for v in data["n_x"]),
        )


def parse_grid(text: str, T: float = 1.0, dim: int = 1) -> TimeSpaceGrid:
    """Parse the `nt,nx,lo,hi` flag; the same box is used in every dimension."""
    parts: Sequence[str] = [p.strip() for p in str(text).split(",") if p.strip()]
    if len(parts) != 4:
        raise GridError(f"grid must be 'nt,nx,lo,hi', got {text!r}", grid=text)
    try:
        n_t, n_x = int(parts[0]), int(parts[1])
        lo, hi = float(parts[2]), float(parts[3])
    except ValueError as exc:
        raise GridError(f"cannot parse grid {text!r}: {exc}", grid=text) from exc
    return TimeSpaceGrid.uniform(T, n_t, n_x, lo, hi, dim=dim)


def require_pde_dim(grid: TimeSpaceGrid) -> None:
    if grid.dim > MAX_PDE_DIM:
        raise GridError(f"the PDE solver supports d <= {MAX_PDE_DIM}, got {grid.dim}", dim=grid.dim)
