#!filepath: src/weakfbsde_app/simulate/bundle.py
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Iterator, Mapping, Optional, Tuple

import numpy as np

from weakfbsde_app.errors import ConfigurationError, DomainError
from weakfbsde_app.records import read_columnar, write_columnar

Array = np.ndarray

RNG_BLOCK = 1024


def time_partition(T: float, dt: Optional[float] = None, n_steps: Optional[int] = None) -> Array:
    """Uniform partition of [0, T]; dt is rounded so that it divides T."""
    if n_steps is None:
        if dt is None or dt <= 0:
            raise DomainError("time_partition needs a positive dt or n_steps", dt=dt)
        n_steps = max(int(math.ceil(T / dt - 1e-9)), 1)
    if n_steps < 1 or T <= 0:
        raise DomainError(f"invalid partition T={T}, n_steps={n_steps}", T=T, n_steps=n_steps)
    return np.linspace(0.0, float(T), int(n_steps) + 1)


def standard_normals(seed: int, n_paths: int, shape: Tuple[int, ...]) -> Array:
    """Normals of shape (n_paths, *shape); path i depends only on (seed, i, shape).

    Paths are drawn in blocks of 1024, block b from SeedSequence(seed, spawn_key=(b,)).
    """
    blocks = max(int(math.ceil(n_paths / RNG_BLOCK)), 1)
    return np.concatenate([block_normals(seed, b, shape) for b in range(blocks)])[:n_paths]


def block_normals(seed: int, block: int, shape: Tuple[int, ...]) -> Array:
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(int(block),)))
    return rng.standard_normal((RNG_BLOCK,) + tuple(shape))


def normal_chunks(
    seed: int, n_paths: int, shape: Tuple[int, ...], chunk_blocks: int = 8
) -> Iterator[Tuple[int, int, Array]]:
    """Yield (start, stop, normals) over consecutive runs of whole 1024-path blocks."""
    chunk = chunk_blocks * RNG_BLOCK
    for start in range(0, n_paths, chunk):
        stop = min(start + chunk, n_paths)
        blocks = range(start // RNG_BLOCK, int(math.ceil(stop / RNG_BLOCK)))
        yield start, stop, np.concatenate([block_normals(seed, b, shape) for b in blocks])[: stop - start]


def brownian_increments(seed: int, n_paths: int, times: Array, dim: int = 1) -> Array:
    """dB of shape (n_paths, n_t, dim)."""
    dts = np.diff(times)
    return standard_normals(seed, n_paths, (dts.size, dim)) * np.sqrt(dts)[None, :, None]


@dataclass(frozen=True)
class PathBundle:
    """Simulated ensemble (B, X, Y, Z, N) on one time partition.

    Attributes:
        times: Partition, shape (n_t + 1,).
        X: States, shape (n_paths, n_t + 1, d).
        Y: Backward values, shape (n_paths, n_t + 1).
        Z: Gradient rows, shape (n_paths, n_t + 1, d).
        N: Orthogonal martingale, shape (n_paths, n_t + 1).
        dB: Brownian increments, shape (n_paths, n_t, d).
        seed: Generator seed.
        weights: Optional Girsanov weights, shape (n_paths,).
        drift_path: Path-functional values used at each step, shape (n_paths, n_t).
        alive: False for paths absorbed at the field boundary.
        problem: Name of the simulated problem.
        meta: Free-form statistics.
        warnings: Diagnostic messages such as an excessive exit fraction.
    """

    times: Array
    X: Array
    Y: Array
    Z: Array
    N: Array
    dB: Array
    seed: int
    weights: Optional[Array] = None
    drift_path: Optional[Array] = None
    alive: Optional[Array] = None
    problem: str = ""
    meta: Mapping[str, Any] = field(default_factory=dict)
    warnings: Tuple[str, ...] = ()

    @property
    def n_paths(self) -> int:
        return int(self.X.shape[0])

    @property
    def n_t(self) -> int:
        return int(self.times.size - 1)

    @property
    def dim(self) -> int:
        return int(self.X.shape[2])

    @property
    def dts(self) -> Array:
        return np.diff(self.times)

    @property
    def T(self) -> float:
        return float(self.times[-1])

    @property
    def exit_fraction(self) -> float:
        if self.alive is None:
            return 0.0
        return float(np.mean(~self.alive))

    def with_(self, **changes: Any) -> PathBundle:
        return replace(self, **changes)

    def save(self, path: Path) -> Path:
        """One row per (path, step): path_id, step, dB_i, X_i, Y, Z_i, N, weight[, K]."""
        P, n1, d = self.X.shape
        dB = np.concatenate([self.dB, np.zeros((P, 1, d))], axis=1)
        w = np.ones(P) if self.weights is None else self.weights
        cols = [
            np.repeat(np.arange(P), n1),
            np.tile(np.arange(n1), P),
            *[dB[..., i].reshape(-1) for i in range(d)],
            *[self.X[..., i].reshape(-1) for i in range(d)],
            self.Y.reshape(-1),
            *[self.Z[..., i].reshape(-1) for i in range(d)],
            self.N.reshape(-1),
            np.repeat(w, n1),
        ]
        names = (
            ["path_id", "step"]
            + [f"dB_{i}" for i in range(d)]
            + [f"X_{i}" for i in range(d)]
            + ["Y"]
            + [f"Z_{i}" for i in range(d)]
            + ["N", "weight"]
        )
        if self.drift_path is not None:
            cols.append(np.concatenate([self.drift_path, np.zeros((P, 1))], axis=1).reshape(-1))
            names.append("K")
        if self.alive is not None:
            cols.append(np.repeat(self.alive.astype(float), n1))
            names.append("alive")
        header = {
            "kind": "path-bundle",
            "times": self.times,
            "seed": self.seed,
            "n_paths": P,
            "dim": d,
            "problem": self.problem,
            "has_weights": self.weights is not None,
            "meta": dict(self.meta),
            "warnings": list(self.warnings),
        }
        return write_columnar(path, header, names, np.stack(cols, axis=1))

    @classmethod
    def load(cls, path: Path) -> PathBundle:
        data = read_columnar(path)
        h = data.header
        if h.get("kind") != "path-bundle":
            raise ConfigurationError(f"{path} is not a path bundle file", path=str(path))
        times = np.asarray(h["times"], dtype=float)
        P, d, n1 = int(h["n_paths"]), int(h["dim"]), times.size

        def col(name: str) -> Array:
            return data.column(name).reshape(P, n1)

        X = np.stack([col(f"X_{i}") for i in range(d)], axis=-1)
        Z = np.stack([col(f"Z_{i}") for i in range(d)], axis=-1)
        dB = np.stack([col(f"dB_{i}")[:, :-1] for i in range(d)], axis=-1)
        return cls(
            times=times,
            X=X,
            Y=col("Y"),
            Z=Z,
            N=col("N"),
            dB=dB,
            seed=int(h["seed"]),
            weights=col("weight")[:, 0] if h.get("has_weights") else None,
            drift_path=col("K")[:, :-1] if "K" in data.columns else None,
            alive=col("alive")[:, 0].astype(bool) if "alive" in data.columns else None,
            problem=str(h.get("problem", "")),
            meta=h.get("meta", {}),
            warnings=tuple(h.get("warnings", ())),
        )
