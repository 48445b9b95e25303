#!filepath: src/weakfbsde_app/problem/transforms.py
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Mapping, Optional, Tuple, Union

import numpy as np
from scipy.special import roots_legendre

from weakfbsde_app.errors import (
    ConfigurationError,
    DomainError,
    EllipticityError,
    MollificationError,
)
from weakfbsde_app.problem.assumptions import ProbePlan, evaluate_batch
from weakfbsde_app.problem.coefficients import CoefficientSet, as_state
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray
Kernel = Callable[[float, Array, Array, Array], Array]

MAX_HALVINGS = 40


@lru_cache(maxsize=8)
def bump_rule(m: int) -> Tuple[Array, Array]:
    """Gauss-Legendre nodes on (-1, 1) with weights of the normalised bump exp(-1/(1-s^2))."""
    s, w = roots_legendre(m)
    w = w * np.exp(-1.0 / (1.0 - s**2))
    return s, w / w.sum()


def _nodes_per_axis(axes: int) -> int:
    if axes <= 1:
        return 33
    if axes == 2:
        return 9
    return 5


def _axes(variables: frozenset[str], dim: int) -> list[tuple[str, int]]:
    """(variable, component) pairs to convolve, in t, x, y, z order."""
    out: list[tuple[str, int]] = []
    for var in ("t", "x", "y", "z"):
        if var not in variables:
            continue
        width = dim if var in ("x", "z") else 1
        out.extend((var, j) for j in range(width))
    return out


def _stencil(axes: list[tuple[str, int]]) -> Tuple[Array, Array]:
    s, w = bump_rule(_nodes_per_axis(len(axes)))
    offsets = np.array(list(itertools.product(s, repeat=len(axes))))
    weights = np.prod(np.array(list(itertools.product(w, repeat=len(axes)))), axis=1)
    return offsets, weights


def _convolve_txyz(fn: Callable, variables: frozenset[str], dim: int, h: float) -> Callable:
    axes = _axes(variables, dim)
    if not axes:
        return fn
    offsets, weights = _stencil(axes)

    def smoothed(t: float, x: Array, y: Array, z: Array) -> Array:
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        total = None
        for off, wk in zip(offsets, weights):
            ts, xs, ys, zs = t, x.copy(), y.copy(), z.copy()
            for (var, j), s in zip(axes, off):
                if var == "t":
                    ts = t - h * s
                elif var == "x":
                    xs[:, j] -= h * s
                elif var == "y":
                    ys = ys - h * s
                else:
                    zs[:, j] -= h * s
            value = wk * np.asarray(fn(ts, xs, ys, zs), dtype=float)
            total = value if total is None else total + value
        return total

    return smoothed


def _convolve_x(fn: Callable[[Array], Array], dim: int, h: float) -> Callable[[Array], Array]:
    offsets, weights = _stencil([("x", j) for j in range(dim)])

    def smoothed(x: Array) -> Array:
        x = np.asarray(x, dtype=float)
        total = np.zeros(x.shape[0])
        for off, wk in zip(offsets, weights):
            total = total + wk * np.asarray(fn(x - h * off), dtype=float)
        return total

    return smoothed


def _search_bandwidth(
    name: str,
    build: Callable[[float], Callable],
    error: Callable[[Callable], float],
    target: float,
) -> Tuple[Callable, float]:
    h = 1.0
    err = float("inf")
    for _ in range(MAX_HALVINGS + 1):
        candidate = build(h)
        err = error(candidate)
        if err <= target:
            logger.debug(f"mollify {name}: bandwidth {h:.3g}, sup error {err:.3g} <= {target:.3g}")
            return candidate, h
        h *= 0.5
    raise MollificationError(
        f"bandwidth search for {name} did not reach {target:.3g} (last error {err:.3g})",
        coefficient=name,
        target=target,
        last_error=err,
    )


def mollify(
    coeffs: CoefficientSet,
    n: int,
    eps_n: float,
    plan: Optional[ProbePlan] = None,
) -> CoefficientSet:
    """Smooth sigma, f and g by convolution with a compactly supported bump.

    Only the arguments each coefficient depends on are convolved. The bandwidth
    starts at 1 and halves until the sampled sup errors satisfy
    |sigma_n - sigma| <= eps_n, |f_n - f| <= 1/n and |g_n - g| <= 1/n.

    Args:
        coeffs: Coefficients to smooth.
        n: Mollification index.
        eps_n: Target for the diffusion coefficient.
        plan: Probe plan for the sup-norm checks.

    Returns:
        CoefficientSet: Smoothed coefficients; meta records the bandwidths.

    Raises:
        DomainError: n < 1 or eps_n <= 0.
        MollificationError: Some target is not met after the halving cap.
    """
    if n < 1 or eps_n <= 0:
        raise DomainError(f"mollify needs n >= 1 and eps_n > 0, got n={n}, eps_n={eps_n}", n=n, eps_n=eps_n)
    plan = plan or ProbePlan(count=500)
    d = coeffs.dim_x
    pts = plan.sample(d)
    _, sigma0, f0 = evaluate_batch(coeffs, pts)
    g0 = coeffs.terminal(pts.x)

    def sigma_error(fn: Callable) -> float:
        _, s, _ = evaluate_batch(coeffs.with_(sigma=fn), pts)
        return float(np.max(np.abs(s - sigma0)))

    def f_error(fn: Callable) -> float:
        _, _, f = evaluate_batch(coeffs.with_(f=fn), pts)
        return float(np.max(np.abs(f - f0)))

    def g_error(fn: Callable) -> float:
        return float(np.max(np.abs(np.asarray(fn(as_state(pts.x, d))) - g0)))

    bandwidths: dict[str, float] = {}
    sigma_n, f_n, g_n = coeffs.sigma, coeffs.f, coeffs.g
    if coeffs.deps.sigma:
        sigma_n, bandwidths["sigma"] = _search_bandwidth(
            "sigma", lambda h: _convolve_txyz(coeffs.sigma, coeffs.deps.sigma, d, h), sigma_error, eps_n
        )
    if coeffs.deps.f:
        f_n, bandwidths["f"] = _search_bandwidth(
            "f", lambda h: _convolve_txyz(coeffs.f, coeffs.deps.f, d, h), f_error, 1.0 / n
        )
    g_n, bandwidths["g"] = _search_bandwidth("g", lambda h: _convolve_x(coeffs.g, d, h), g_error, 1.0 / n)

    logger.info(f"Mollified {coeffs.name} at n={n}: bandwidths {bandwidths}")
    return coeffs.with_(
        name=f"{coeffs.name}|n={n}",
        sigma=sigma_n,
        f=f_n,
        g=g_n,
        meta={**coeffs.meta, "mollified_n": n, "eps_n": eps_n, "bandwidths": bandwidths},
    )


def shift_coefficients(coeffs: CoefficientSet, n: int, alpha: float) -> CoefficientSet:
    """f + (2 alpha - 1) 2/n and g + (2 alpha - 1) / n."""
    if not 0.0 <= alpha <= 1.0:
        raise DomainError(f"alpha must lie in [0, 1], got {alpha}", alpha=alpha)
    if n < 1:
        raise DomainError(f"n must be positive, got {n}", n=n)
    df = (2.0 * alpha - 1.0) * 2.0 / n
    dg = (2.0 * alpha - 1.0) / n
    f, g = coeffs.f, coeffs.g

    def f_shift(t: float, x: Array, y: Array, z: Array) -> Array:
        return np.asarray(f(t, x, y, z), dtype=float) + df

    def g_shift(x: Array) -> Array:
        return np.asarray(g(x), dtype=float) + dg

    return coeffs.with_(f=f_shift, g=g_shift, meta={**coeffs.meta, "alpha": alpha, "shift_n": n})


def remove_drift(coeffs: CoefficientSet, plan: Optional[ProbePlan] = None) -> Tuple[CoefficientSet, Kernel]:
    """Zero the drift and return the Girsanov kernel theta = -sigma^{-1} b.

    Raises:
        EllipticityError: sigma is singular at a probe or along a kernel evaluation.
    """
    plan = plan or ProbePlan(count=500)
    pts = plan.sample(coeffs.dim_x)
    _, sigma, _ = evaluate_batch(coeffs, pts)
    smallest = np.min(np.abs(np.linalg.eigvals(sigma)), axis=1)
    if np.any(smallest <= 0.0):
        i = int(np.argmin(smallest))
        raise EllipticityError(f"sigma singular at probe {i}", probe=pts.at(i))

    b_fn, sigma_fn, dim = coeffs.b, coeffs.sigma, coeffs.dim_x

    def kernel(t: float, x: Array, y: Array, z: Array) -> Array:
        x = as_state(x, dim)
        n = x.shape[0]
        b = np.broadcast_to(np.asarray(b_fn(t, x, y, z), dtype=float), (n, dim))
        s = np.broadcast_to(np.asarray(sigma_fn(t, x, y, z), dtype=float), (n, dim, dim))
        try:
            return -np.linalg.solve(s, b[..., None])[..., 0]
        except np.linalg.LinAlgError as e:
            raise EllipticityError(f"sigma singular at t={t}", t=t) from e

    def no_drift(t: float, x: Array, y: Array, z: Array) -> Array:
        return np.zeros((np.shape(x)[0], dim))

    deps = coeffs.deps
    stripped = coeffs.with_(
        b=no_drift,
        deps=type(deps)(b=frozenset(), sigma=deps.sigma, f=deps.f),
        meta={**coeffs.meta, "drift_removed": True},
    )
    return stripped, kernel


@dataclass(frozen=True, slots=True)
class StrongForm:
    """Coefficients in the (theta = z sigma) variable and the inverse psi."""

    coeffs: CoefficientSet
    psi: Callable[[float, Array, Array, Array], Array]


@dataclass(frozen=True, slots=True)
class NotInvertible:
    interval: Tuple[float, float]
    probe: Mapping[str, object]


def _zsigma(coeffs: CoefficientSet, t: float, x: Array, y: Array, z: Array) -> Array:
    s = np.asarray(coeffs.sigma(t, x, y, z[:, None]), dtype=float).reshape(-1)
    return z * s


def _bisect_inverse(
    coeffs: CoefficientSet,
    t: float,
    x: Array,
    y: Array,
    theta: Array,
    z_range: Tuple[float, float],
    tol: float,
) -> Array:
    n = theta.shape[0]
    lo = np.full(n, float(z_range[0]))
    hi = np.full(n, float(z_range[1]))
    for _ in range(60):
        out_lo = _zsigma(coeffs, t, x, y, lo) > theta
        out_hi = _zsigma(coeffs, t, x, y, hi) < theta
        if not (out_lo.any() or out_hi.any()):
            break
        width = hi - lo
        lo = np.where(out_lo, lo - width, lo)
        hi = np.where(out_hi, hi + width, hi)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        below = _zsigma(coeffs, t, x, y, mid) < theta
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
        if np.max(hi - lo) <= tol:
            break
    return 0.5 * (lo + hi)


def weak_to_strong(
    coeffs: CoefficientSet,
    z_range: Tuple[float, float] = (-5.0, 5.0),
    n_scan: int = 401,
    plan: Optional[ProbePlan] = None,
    tol: float = 1e-12,
) -> Union[StrongForm, NotInvertible]:
    """Rewrite a one-dimensional weak FBSDE in the variable theta = z sigma(t, x, y, z).

    The map z -> z sigma is scanned for strict increase on z_range at every probe;
    the inverse psi is then computed by vectorised bisection.

    Raises:
        ConfigurationError: dim_x != 1.
    """
    if coeffs.dim_x != 1:
        raise ConfigurationError("weak_to_strong is defined for d = 1 only", dim_x=coeffs.dim_x)
    plan = plan or ProbePlan(count=32)
    pts = plan.sample(1)
    zs = np.linspace(z_range[0], z_range[1], n_scan)
    for i in range(len(pts)):
        x = np.repeat(pts.x[i : i + 1], n_scan, axis=0)
        y = np.full(n_scan, pts.y[i])
        phi = _zsigma(coeffs, float(pts.t[i]), x, y, zs)
        steps = np.diff(phi)
        bad = np.flatnonzero(steps <= 0.0)
        if bad.size:
            j = int(bad[0])
            logger.warning(f"z*sigma not increasing on [{zs[j]:.3g}, {zs[j + 1]:.3g}] at probe {i}")
            return NotInvertible(interval=(float(zs[j]), float(zs[j + 1])), probe=pts.at(i))

    original = coeffs

    def psi(t: float, x: Array, y: Array, theta: Array) -> Array:
        x = as_state(x, 1)
        n = x.shape[0]
        y = np.broadcast_to(np.asarray(y, dtype=float), (n,))
        theta = np.broadcast_to(np.asarray(theta, dtype=float).reshape(-1), (n,))
        return _bisect_inverse(original, t, x, y, theta, z_range, tol)

    def b_tilde(t: float, x: Array, y: Array, theta: Array) -> Array:
        z = psi(t, x, y, theta)[:, None]
        return original.b(t, x, y, z)

    def sigma_tilde(t: float, x: Array, y: Array, theta: Array) -> Array:
        z = psi(t, x, y, theta)[:, None]
        return original.sigma(t, x, y, z)

    def f_tilde(t: float, x: Array, y: Array, theta: Array) -> Array:
        z = psi(t, x, y, theta)
        n = z.shape[0]
        b = np.broadcast_to(np.asarray(original.b(t, x, y, z[:, None]), dtype=float), (n, 1))
        return np.asarray(original.f(t, x, y, z[:, None]), dtype=float) - z * b[:, 0]

    strong = coeffs.with_(
        name=f"{coeffs.name}|strong",
        b=b_tilde,
        sigma=sigma_tilde,
        f=f_tilde,
        meta={**coeffs.meta, "z_range": z_range},
    )
    return StrongForm(coeffs=strong, psi=psi)
