#!filepath: src/weakfbsde_app/problem/assumptions.py
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Tuple

import numpy as np

from weakfbsde_app.errors import InvalidCoefficientError
from weakfbsde_app.problem.coefficients import CoefficientSet
from weakfbsde_app.utils.logger import get_logger

logger = get_logger(__name__)

Array = np.ndarray

SYMMETRY_TOL = 1e-12


@dataclass(frozen=True, slots=True)
class Probes:
    t: Array
    x: Array
    y: Array
    z: Array

    def __len__(self) -> int:
        return int(self.t.shape[0])

    def at(self, i: int) -> dict[str, object]:
        return {
            "t": float(self.t[i]),
            "x": self.x[i].tolist(),
            "y": float(self.y[i]),
            "z": self.z[i].tolist(),
        }


@dataclass(frozen=True, slots=True)
class ProbePlan:
    """Sampling plan over a bounded box in (t, x, y, z).

    The first probe is the box centre so that centred degeneracies are always hit.

    Attributes:
        T: Horizon; t is drawn from [0, T].
        x_box: Bounds for every x component.
        y_box: Bounds for y.
        z_box: Bounds for every z component.
        count: Number of probes.
        seed: Seed of the sampling generator.
        lipschitz_step: Increment of the difference quotients.
        tolerance: Declared tolerance of every check.
    """

    T: float = 1.0
    x_box: Tuple[float, float] = (-4.0, 4.0)
    y_box: Tuple[float, float] = (-4.0, 4.0)
    z_box: Tuple[float, float] = (-2.0, 2.0)
    count: int = 2000
    seed: int = 0
    lipschitz_step: float = 1e-3
    tolerance: float = 1e-9

    def sample(self, dim: int) -> Probes:
        rng = np.random.default_rng(self.seed)
        n = max(int(self.count), 1)
        t = rng.uniform(0.0, self.T, size=n)
        x = rng.uniform(*self.x_box, size=(n, dim))
        y = rng.uniform(*self.y_box, size=n)
        z = rng.uniform(*self.z_box, size=(n, dim))
        t[0] = 0.5 * self.T
        x[0] = 0.5 * (self.x_box[0] + self.x_box[1])
        y[0] = 0.5 * (self.y_box[0] + self.y_box[1])
        z[0] = 0.5 * (self.z_box[0] + self.z_box[1])
        return Probes(t=t, x=x, y=y, z=z)


@dataclass(frozen=True, slots=True)
class AssumptionCheck:
    name: str
    probe_count: int
    worst_violation: float
    passed: bool
    skipped: bool = False


@dataclass(frozen=True, slots=True)
class AssumptionReport:
    """Sampled evidence for the standing assumptions."""

    problem: str
    checks: Tuple[AssumptionCheck, ...]
    lipschitz_estimates: Mapping[str, float]
    plan: ProbePlan
    worst_probe: Mapping[str, object] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def check(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


def evaluate_batch(coeffs: CoefficientSet, probes: Probes) -> tuple[Array, Array, Array]:
    """(b, sigma, f) over probes, one time value at a time."""
    n, d = len(probes), coeffs.dim_x
    b = np.empty((n, d))
    sigma = np.empty((n, d, d))
    f = np.empty(n)
    for t in np.unique(probes.t):
        idx = np.flatnonzero(probes.t == t)
        values = coeffs.evaluate(float(t), probes.x[idx], probes.y[idx], probes.z[idx])
        b[idx], sigma[idx], f[idx] = values.b, values.sigma, values.f
    return b, sigma, f


def _require_finite(name: str, values: Array, probes: Probes) -> None:
    flat = np.asarray(values).reshape(len(probes), -1)
    bad = np.flatnonzero(~np.all(np.isfinite(flat), axis=1))
    if bad.size:
        i = int(bad[0])
        raise InvalidCoefficientError(
            f"non-finite {name} at probe {i}: {probes.at(i)}", coefficient=name, probe=probes.at(i)
        )


def _check(name: str, violations: Array, tolerance: float) -> AssumptionCheck:
    worst = float(np.max(violations)) if violations.size else 0.0
    worst = max(worst, 0.0)
    return AssumptionCheck(name=name, probe_count=int(violations.size), worst_violation=worst, passed=worst <= tolerance)


def _unit_directions(rng: np.random.Generator, n: int, d: int) -> Array:
    v = rng.standard_normal((n, d))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _quotients(
    fn: Callable[[Probes], Array], probes: Probes, shifted: Probes, step: float
) -> Array:
    a = np.asarray(fn(probes), dtype=float).reshape(len(probes), -1)
    b = np.asarray(fn(shifted), dtype=float).reshape(len(probes), -1)
    return np.linalg.norm(b - a, axis=1) / step


def validate_assumptions(coeffs: CoefficientSet, probes: Optional[ProbePlan] = None) -> AssumptionReport:
    """Check boundedness, symmetry, ellipticity, Lipschitz quotients and condition (v).

    Args:
        coeffs: Problem to check.
        probes: Sampling plan; defaults to a 2000-point plan on the standard box.

    Returns:
        AssumptionReport: One entry per check, plus per-argument quotient maxima.

    Raises:
        InvalidCoefficientError: A coefficient is not finite at some probe.
    """
    plan = probes or ProbePlan()
    d = coeffs.dim_x
    pts = plan.sample(d)
    n = len(pts)
    bounds = coeffs.bounds
    tol = plan.tolerance

    b, sigma, f = evaluate_batch(coeffs, pts)
    _require_finite("b", b, pts)
    _require_finite("sigma", sigma, pts)
    zero = Probes(t=pts.t, x=pts.x, y=np.zeros(n), z=np.zeros((n, d)))
    _, _, f00 = evaluate_batch(coeffs, zero)
    g = coeffs.terminal(pts.x)
    _require_finite("f", f, pts)
    _require_finite("g", g, pts)

    sigma_norm = np.linalg.norm(sigma, ord=2, axis=(1, 2))
    bounded = np.concatenate(
        [sigma_norm - bounds.C0, np.abs(f00) - bounds.C0, np.abs(g) - bounds.C0]
    )
    asym = np.max(np.abs(sigma - np.swapaxes(sigma, 1, 2)), axis=(1, 2))
    min_eig = np.linalg.eigvalsh(0.5 * (sigma + np.swapaxes(sigma, 1, 2)))[:, 0]

    checks = [
        _check("boundedness", bounded, tol),
        _check("symmetry", asym - SYMMETRY_TOL, tol),
        _check("ellipticity", bounds.c0 - min_eig, tol),
    ]

    rng = np.random.default_rng(plan.seed + 1)
    h = plan.lipschitz_step
    estimates: Dict[str, float] = {}
    lipschitz_violations = []

    def bfn(p: Probes) -> Array:
        return evaluate_batch(coeffs, p)[0]

    def sfn(p: Probes) -> Array:
        return evaluate_batch(coeffs, p)[1]

    def ffn(p: Probes) -> Array:
        return evaluate_batch(coeffs, p)[2]

    shifts = {
        "x": Probes(t=pts.t, x=pts.x + h * _unit_directions(rng, n, d), y=pts.y, z=pts.z),
        "y": Probes(t=pts.t, x=pts.x, y=pts.y + h * rng.choice([-1.0, 1.0], size=n), z=pts.z),
        "z": Probes(t=pts.t, x=pts.x, y=pts.y, z=pts.z + h * _unit_directions(rng, n, d)),
    }
    for cname, fn in (("b", bfn), ("sigma", sfn), ("f", ffn)):
        for var, shifted in shifts.items():
            q = _quotients(fn, pts, shifted, h)
            estimates[f"{cname}.{var}"] = float(np.max(q))
            lipschitz_violations.append(q - bounds.L)
    gq = np.abs(coeffs.terminal(shifts["x"].x) - g) / h
    estimates["g.x"] = float(np.max(gq))
    lipschitz_violations.append(gq - bounds.L)
    checks.append(_check("lipschitz", np.concatenate(lipschitz_violations), tol))

    if d == 1:
        checks.append(AssumptionCheck(name="sigma-z-decay", probe_count=0, worst_violation=0.0, passed=True, skipped=True))
    else:
        dz = shifts["z"].z - pts.z
        sig2 = sfn(shifts["z"])
        lhs = np.linalg.norm(sig2 - sigma, ord=2, axis=(1, 2))
        rhs = bounds.C0 * np.linalg.norm(dz, axis=1) / (1.0 + np.linalg.norm(pts.z, axis=1))
        checks.append(_check("sigma-z-decay", lhs - rhs, tol))

    worst_probe: Dict[str, object] = {}
    if not checks[2].passed:
        worst_probe = pts.at(int(np.argmin(min_eig)))

    report = AssumptionReport(
        problem=coeffs.name,
        checks=tuple(checks),
        lipschitz_estimates=estimates,
        plan=plan,
        worst_probe=worst_probe,
    )
    logger.info(
        f"Assumptions for {coeffs.name}: "
        + ", ".join(f"{c.name}={'skip' if c.skipped else ('ok' if c.passed else f'FAIL({c.worst_violation:.3g})')}" for c in checks)
    )
    return report
