#!filepath: src/weakfbsde_app/control/experiments.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from weakfbsde_app.control.hamiltonians import f_star, hamiltonian_H, hamiltonian_hat, hamiltonian_tilde
from weakfbsde_app.control.spec import HamiltonianSpec, barlow_terminal_table, diffusion_control_spec, drift_control_spec
from weakfbsde_app.errors import DomainError
from weakfbsde_app.mgcheck.checks import check_martingale
from weakfbsde_app.mgcheck.report import CheckReport
from weakfbsde_app.pde.field import DecouplingField
from weakfbsde_app.pde.grid import TimeSpaceGrid
from weakfbsde_app.pde.hjb import HJBOptions, solve_hjb
from weakfbsde_app.problem.catalog import get_problem
from weakfbsde_app.problem.coefficients import Bounds, CoefficientDeps, CoefficientSet, constant_sigma, zero_drift
from weakfbsde_app.simulate.backward import backward_recursion
from weakfbsde_app.simulate.bundle import PathBundle, normal_chunks, time_partition
from weakfbsde_app.simulate.euler import build_fbsde_solution
from weakfbsde_app.simulate.functionals import DiscretePath, PathFunctional, barlow_sigma
from weakfbsde_app.simulate.girsanov import girsanov_weight
from weakfbsde_app.simulate.martingale import residual_orthogonal_martingale
from weakfbsde_app.simulate.timechange import time_change_paths
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray
Source = Union[float, PathFunctional, Callable[[float, DiscretePath], Array]]


@dataclass(frozen=True, slots=True)
class LevelValue:
    n: int
    value: float
    standard_error: float


@dataclass(frozen=True, slots=True)
class ControlExperimentResult:
    """Values of one control experiment under the weak and strong formulations.

    Attributes:
        name: Experiment identifier.
        value_weak: Monte Carlo estimate of the weak value under the optimal control.
        value_weak_se: Its standard error.
        value_hjb: u(0, x0) from the HJB solve, when one is made.
        values_strong_sequence: Strong values of the piecewise-constant controls.
        values_weak_sequence: The same controls valued by Girsanov reweighting.
        optimal_control_description: Human-readable optimal control.
        details: Auxiliary measurements.
        checks: Statistical checks run along the way.
    """

    name: str
    value_weak: float
    value_weak_se: float
    value_hjb: Optional[float] = None
    values_strong_sequence: Tuple[LevelValue, ...] = ()
    values_weak_sequence: Tuple[LevelValue, ...] = ()
    optimal_control_description: str = ""
    details: Mapping[str, Any] = field(default_factory=dict)
    checks: Tuple[CheckReport, ...] = ()

    def to_record(self) -> dict[str, Any]:
        def levels(seq: Sequence[LevelValue]) -> list[dict[str, float]]:
            return [{"n": v.n, "value": v.value, "se": v.standard_error} for v in seq]

        return {
            "name": self.name,
            "value_weak": self.value_weak,
            "value_weak_se": self.value_weak_se,
            "value_hjb": self.value_hjb,
            "values_strong_sequence": levels(self.values_strong_sequence),
            "values_weak_sequence": levels(self.values_weak_sequence),
            "optimal_control": self.optimal_control_description,
            "details": dict(self.details),
            "checks": [c.to_record() for c in self.checks],
        }


@dataclass(frozen=True, slots=True)
class WeakValue:
    value: float
    standard_error: float
    unweighted: float
    fstar_value: Optional[float] = None


@dataclass(frozen=True, slots=True)
class BlockAverage:
    """Piecewise-constant control: on block i the mean of K over block i - 1, 0 on the first."""

    level: int

    def block_length(self, n_t: int) -> int:
        if self.level < 1 or n_t % self.level:
            raise DomainError(f"{n_t} steps cannot be split into {self.level} blocks", n_t=n_t, level=self.level)
        return n_t // self.level

    def at(self, k: int, K: Array) -> Array:
        s = self.block_length(K.shape[1])
        b = k // s
        if b == 0:
            return np.zeros(K.shape[0])
        return np.mean(K[:, (b - 1) * s : b * s], axis=1)

    def along(self, K: Array) -> Array:
        """Whole control path from a complete K path."""
        P, n_t = K.shape
        s = self.block_length(n_t)
        means = K.reshape(P, self.level, s).mean(axis=2)
        shifted = np.concatenate([np.zeros((P, 1)), means[:, :-1]], axis=1)
        return np.repeat(shifted, s, axis=1)


def _mean_se(values: Array) -> tuple[float, float]:
    if values.size < 2:
        return float(np.mean(values)), 0.0
    return float(np.mean(values)), float(np.std(values, ddof=1) / np.sqrt(values.size))


def _evaluate(source: Source, t: float, prefix: DiscretePath, n: int) -> Array:
    if isinstance(source, (int, float)):
        return np.full(n, float(source))
    if isinstance(source, PathFunctional) and t <= 0.0:
        return np.zeros(n)
    return np.broadcast_to(np.asarray(source(t, prefix), dtype=float), (n,))


def _simulate(
    dB: Array,
    times: Array,
    kernel: Source,
    control: Union[Source, BlockAverage],
    controlled: bool,
) -> tuple[Array, Array, Array]:
    """X = int alpha dt + B when controlled, X = B otherwise; returns (X, K, alpha)."""
    P, n_t = dB.shape
    dts = np.diff(times)
    X = np.zeros((P, n_t + 1))
    K = np.zeros((P, n_t))
    A = np.zeros((P, n_t))
    for k in range(n_t):
        prefix = DiscretePath(times=times[: k + 1], values=X[:, : k + 1])
        K[:, k] = _evaluate(kernel, times[k], prefix, P)
        if isinstance(control, BlockAverage):
            A[:, k] = control.at(k, K)
        else:
            A[:, k] = _evaluate(control, times[k], prefix, P)
        X[:, k + 1] = X[:, k] + dB[:, k] + (A[:, k] * dts[k] if controlled else 0.0)
    return X, K, A


def _running_cost(A: Array, K: Array, dts: Array) -> Array:
    return -0.5 * ((A - K) ** 2) @ dts


def _fstar_value(k: float, dB: Array, times: Array, seed: int) -> float:
    """Y_0 of the f*-BSDE under P0 for the constant kernel k, with regression Z."""
    spec = drift_control_spec(k)

    def driver(t: float, x: Array, y: Array, z: Array) -> Array:
        return f_star(spec, t, np.asarray(z).reshape(-1))[0]

    coeffs = CoefficientSet(
        name="drift-fstar",
        dim_x=1,
        b=zero_drift(1),
        sigma=constant_sigma(1.0),
        f=driver,
        g=lambda x: np.zeros(np.shape(x)[0]),
        bounds=Bounds(C0=1.0, c0=1.0, L=1.0),
        deps=CoefficientDeps.of(b="", sigma="", f="z"),
    )
    X = np.concatenate([np.zeros((dB.shape[0], 1)), np.cumsum(dB, axis=1)], axis=1)[..., None]
    P, n1 = X.shape[0], X.shape[1]
    bundle = PathBundle(
        times=times,
        X=X,
        Y=np.zeros((P, n1)),
        Z=np.zeros((P, n1, 1)),
        N=np.zeros((P, n1)),
        dB=dB[..., None],
        seed=seed,
        problem=coeffs.name,
    )
    solved = backward_recursion(bundle, coeffs)
    return float(np.mean(solved.Y[:, 0]))


def weak_drift_value(
    control: Source,
    kernel: Source,
    T: float = 1.0,
    n_steps: int = 256,
    n_paths: int = 20_000,
    seed: int = 0,
    fstar_paths: int = 4096,
) -> WeakValue:
    """Weak value of E[int -1/2 (alpha - K)^2 dt] by simulating X = B and reweighting.

    With a constant kernel the f*-BSDE started from g = 0 is also solved by the
    discrete backward recursion, giving an independent value of the same problem.

    Args:
        control: Constant, path functional or callable (t, path) -> alpha.
        kernel: Constant k or path functional K.
        T: Horizon.
        n_steps: Time steps.
        n_paths: Ensemble size.
        seed: Generator seed.
        fstar_paths: Paths used for the f*-BSDE cross-check.

    Raises:
        GirsanovOverflowError: Some reweighting exponent overflows.
    """
    times = time_partition(T, n_steps=n_steps)
    dts = np.diff(times)
    weighted, plain = [], []
    fstar = None
    for start, _, normals in normal_chunks(seed, n_paths, (n_steps, 1)):
        dB = normals[..., 0] * np.sqrt(dts)[None, :]
        _, K, A = _simulate(dB, times, kernel, control, controlled=False)
        cost = _running_cost(A, K, dts)
        weighted.append(girsanov_weight(A, dB, times) * cost)
        plain.append(cost)
        if start == 0 and isinstance(kernel, (int, float)):
            fstar = _fstar_value(float(kernel), dB[:fstar_paths], times, seed)
    value, se = _mean_se(np.concatenate(weighted))
    return WeakValue(value=value, standard_error=se, unweighted=float(np.mean(np.concatenate(plain))), fstar_value=fstar)


def drift_control_experiment(
    levels: Sequence[int] = (1, 2, 4, 8, 16),
    n_paths: int = 20_000,
    seed: int = 0,
    T: float = 1.0,
    depth: int = 20,
    n_steps: int = 256,
    fbsde_paths: int = 2048,
) -> ControlExperimentResult:
    """Unit-diffusion drift control with the Tsirelson kernel K.

    The weak value uses alpha* = K, whose running cost vanishes identically. The
    strong sequence drives X = int alpha^n dt + B with the block-averaged feedback
    alpha^n; the weak sequence values the same feedback along B by reweighting.
    All levels share one set of Brownian increments.
    """
    kernel = PathFunctional.tsirelson(T, depth)
    times = time_partition(T, n_steps=n_steps)
    dts = np.diff(times)
    controls = [BlockAverage(int(n)) for n in levels]
    for c in controls:
        c.block_length(n_steps)

    optimal: list[Array] = []
    strong: dict[int, list[Array]] = {c.level: [] for c in controls}
    weak: dict[int, list[Array]] = {c.level: [] for c in controls}
    for _, _, normals in normal_chunks(seed, n_paths, (n_steps, 1)):
        dB = normals[..., 0] * np.sqrt(dts)[None, :]
        _, K_b, _ = _simulate(dB, times, kernel, 0.0, controlled=False)
        optimal.append(girsanov_weight(K_b, dB, times) * _running_cost(K_b, K_b, dts))
        for c in controls:
            _, K, A = _simulate(dB, times, kernel, c, controlled=True)
            strong[c.level].append(_running_cost(A, K, dts))
            A_b = c.along(K_b)
            weak[c.level].append(girsanov_weight(A_b, dB, times) * _running_cost(A_b, K_b, dts))

    def sequence(values: Mapping[int, list[Array]]) -> Tuple[LevelValue, ...]:
        return tuple(LevelValue(n, *_mean_se(np.concatenate(v))) for n, v in values.items())

    value, se = _mean_se(np.concatenate(optimal))
    strong_seq, weak_seq = sequence(strong), sequence(weak)
    for s in strong_seq:
        logger.info(f"strong value at n={s.n}: {s.value:.5f} +- {s.standard_error:.5f}")
    return ControlExperimentResult(
        name="drift",
        value_weak=value,
        value_weak_se=se,
        values_strong_sequence=strong_seq,
        values_weak_sequence=weak_seq,
        optimal_control_description="alpha*(t) = K(t, X), the Tsirelson drift of the path",
        details={
            "n_paths": n_paths,
            "n_steps": n_steps,
            "depth": depth,
            "fbsde_residual_sup": tsirelson_fbsde_residual(T, depth, n_steps, min(n_paths, fbsde_paths), seed),
        },
    )


def tsirelson_fbsde_residual(T: float, depth: int, n_steps: int, n_paths: int, seed: int) -> float:
    """sup |N| for Y = Z = 0 on the FBSDE with drift Z + K and driver Z^2/2 + K Z."""
    coeffs = get_problem("tsirelson-fbsde", T=T, depth=depth)
    grid = TimeSpaceGrid.uniform(T, n_t=4, n_x=5, lo=-50.0, hi=50.0)
    zero = DecouplingField.from_function(grid, lambda t, x: np.zeros(x.shape[0]))
    times = time_partition(T, n_steps=n_steps)
    bundle = residual_orthogonal_martingale(build_fbsde_solution(zero, coeffs, 0.0, times, n_paths, seed), coeffs)
    return float(np.max(np.abs(bundle.N)))


def second_derivative_error(lam: float, half_width: float = 1.0) -> float:
    """max |g'' - sigma_0^2| on [-half_width, half_width] from the tabulated g."""
    xs, g = barlow_terminal_table(float(lam))
    h = float(xs[1] - xs[0])
    d2 = (g[2:] - 2.0 * g[1:-1] + g[:-2]) / h**2
    mid = xs[1:-1]
    mask = np.abs(mid) <= half_width
    sigma2 = barlow_sigma(PathFunctional.barlow(lam), mid[mask]) ** 2
    return float(np.max(np.abs(d2[mask] - sigma2)))


def diffusion_control_experiment(
    lam: float = 0.75,
    grid: Optional[TimeSpaceGrid] = None,
    n_paths: int = 100_000,
    seed: int = 0,
    control_hi: Optional[float] = None,
    T_mc: float = 0.5,
    n_t_mc: int = 50,
    du: float = 2e-3,
    threshold: float = 5.0,
    hjb_opts: Optional[HJBOptions] = None,
) -> ControlExperimentResult:
    """Diffusion control with terminal g, g'' = sigma_0^2, and optimal control sigma_0(X).

    The HJB equation is solved on the grid and compared with g. Along the optimal
    dynamics, simulated by time change, Y = g(X) - 1/2 int sigma_0(X)^4 dt is tested
    for the martingale property; its mean estimates the weak value g(0) = 0.
    """
    grid = grid or TimeSpaceGrid.uniform(1.0, n_t=200, n_x=401, lo=-4.0, hi=4.0)
    spec = diffusion_control_spec(lam, control_hi)
    functional: PathFunctional = spec.meta["functional"]

    hjb = solve_hjb(spec, grid, hjb_opts)
    g_nodes = spec.terminal_on_axis(grid.axes[0])
    gap = float(np.max(np.abs(hjb.u - g_nodes[None, :])))
    u00 = float(hjb.value(0.0, np.zeros((1, 1)))[0])

    def sigma0(w: Array) -> Array:
        return barlow_sigma(functional, w)

    paths = time_change_paths(
        sigma0,
        T_mc,
        n_t_mc,
        n_paths,
        seed,
        du=du,
        sigma_max=functional.sigma_range[1],
        integrands={"sigma4": lambda w: sigma0(w) ** 4},
    )
    X = paths.X
    Y = spec.g(X.reshape(-1)).reshape(X.shape) - 0.5 * paths.integrals["sigma4"]
    P, n1 = X.shape
    bundle = PathBundle(
        times=paths.times,
        X=X[..., None],
        Y=Y,
        Z=np.zeros((P, n1, 1)),
        N=np.zeros((P, n1)),
        dB=np.zeros((P, n1 - 1, 1)),
        seed=seed,
        problem="barlow",
    )
    report = check_martingale(bundle, get_problem("barlow", lam=lam), "MY", threshold=threshold)
    value, se = _mean_se(Y[:, -1])
    logger.info(f"HJB u(0,0)={u00:.3e}, sup|u-g|={gap:.3e}, weak value {value:.4f} +- {se:.4f}")
    return ControlExperimentResult(
        name="diffusion",
        value_weak=value,
        value_weak_se=se,
        value_hjb=u00,
        optimal_control_description="alpha*(t) = sigma_0(X_t)",
        details={
            "lam": lam,
            "control_set": [spec.control_lo, spec.control_hi],
            "sup_gap_to_g": gap,
            "policy_rounds_used": hjb.meta.get("policy_rounds_used"),
            "g_second_derivative_error": second_derivative_error(lam),
            "clock_steps": paths.clock_steps,
        },
        checks=(report,),
    )


def hamiltonian_probes(spec: HamiltonianSpec, n_probes: int = 64, seed: int = 0) -> dict[str, Array]:
    """Seeded probe points (x, z, gamma).

    For the diffusion-control spec the probes sit on the terminal function,
    z = g'(x) and gamma = g''(x) = sigma_0(x)^2.
    """
    rng = np.random.default_rng(seed)
    x = rng.uniform(-2.0, 2.0, n_probes)
    if "lam" in spec.meta:
        xs, table = barlow_terminal_table(float(spec.meta["lam"]))
        z = np.interp(x, xs, np.gradient(table, xs))
        gamma = barlow_sigma(spec.meta["functional"], x) ** 2
    else:
        z = rng.uniform(-2.0, 2.0, n_probes)
        gamma = rng.uniform(-2.0, 2.0, n_probes)
    return {"x": x, "z": z, "gamma": gamma}


def hamiltonian_table(
    spec: HamiltonianSpec,
    probes: Mapping[str, Array],
    t: float = 0.0,
    widen: float = 0.5,
) -> dict[str, Array]:
    """H, H-hat, H-tilde and f* at the probes, plus H over an enlarged control set.

    H-tilde is evaluated at (z, gamma sigma(alpha_H)), the pair that a smooth value
    function produces along the optimal control.
    """
    x, z, gamma = (np.asarray(probes[k], dtype=float) for k in ("x", "z", "gamma"))
    H, arg = hamiltonian_H(spec, t, z, gamma, x)
    z_tilde = gamma * np.asarray(spec.sigma_of(t, arg), dtype=float)
    H_tilde, _ = hamiltonian_tilde(spec, t, z, z_tilde, x)
    H_hat, _ = hamiltonian_hat(spec, t, z, gamma, x)
    fs, _ = f_star(spec, t, z, x)
    H_big, _ = hamiltonian_H(spec.with_controls(spec.control_lo - widen, spec.control_hi + widen), t, z, gamma, x)
    return {
        "x": x,
        "z": z,
        "gamma": gamma,
        "H": H,
        "H_argmax": arg,
        "H_hat": H_hat,
        "H_tilde": H_tilde,
        "f_star": fs,
        "H_enlarged": H_big,
        "gap_hat": np.abs(H_hat - H),
        "gap_tilde": np.abs(H_tilde - H),
    }
