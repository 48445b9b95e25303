#!filepath: tests/test_problem.py
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from weakfbsde_app.errors import (
    ConfigurationError,
    DomainError,
    EllipticityError,
    InvalidCoefficientError,
    ProblemNotFoundError,
)
from weakfbsde_app.problem.assumptions import ProbePlan, validate_assumptions
from weakfbsde_app.problem.catalog import CATALOG, get_problem, problem_ids
from weakfbsde_app.problem.coefficients import as_state
from weakfbsde_app.problem.transforms import (
    NotInvertible,
    StrongForm,
    bump_rule,
    mollify,
    remove_drift,
    shift_coefficients,
    weak_to_strong,
)

PLAN = ProbePlan(count=200)


def test_catalog_lists_every_entry() -> None:
    ids = problem_ids()
    assert "heat-x2" in ids and "barlow" in ids and "tsirelson" in ids
    for pid in ids:
        c = CATALOG[pid].build()
        assert c.dim_x == CATALOG[pid].dim


def test_unknown_problem_and_parameter() -> None:
    with pytest.raises(ProblemNotFoundError):
        get_problem("heat-x3")
    with pytest.raises(ConfigurationError, match="no parameter"):
        get_problem("heat-x2", lam=0.8)


def test_dependency_flags() -> None:
    assert get_problem("heat-x2").linear
    assert not get_problem("example-2.1").linear
    assert get_problem("drift-k").deps.forward_coupled
    assert not get_problem("tsirelson").deps.forward_coupled
    assert get_problem("tsirelson").path_dependent_drift is not None


def test_as_state_shapes() -> None:
    assert as_state(0.5, 1).shape == (1, 1)
    assert as_state(np.zeros(3), 1).shape == (3, 1)
    assert as_state(np.zeros(2), 2).shape == (1, 2)
    assert as_state(1.0, 3).shape == (1, 3)


def test_evaluate_adds_path_terms() -> None:
    c = get_problem("tsirelson-fbsde", depth=4)
    vals = c.evaluate(0.5, np.zeros((3, 1)), 0.0, np.full((3, 1), 2.0), path_value=np.full(3, 0.25))
    assert_allclose(vals.b[:, 0], 2.25)
    assert_allclose(vals.f, 0.5 * 4.0 + 0.25 * 2.0)


@pytest.mark.parametrize("pid", ["heat-x2", "heat-cos", "example-2.1", "example-2.2", "zdep"])
def test_standing_assumptions_hold(pid: str) -> None:
    report = validate_assumptions(get_problem(pid), PLAN)
    assert report.passed, [c for c in report.checks if not c.passed]
    assert report.check("sigma-z-decay").skipped


def test_degenerate_example_fails_ellipticity() -> None:
    report = validate_assumptions(get_problem("example-2.1-degenerate"), PLAN)
    assert not report.check("ellipticity").passed
    assert report.worst_probe["z"][0] < 0.0
    assert not report.passed


def test_two_dimensional_decay_check_runs() -> None:
    report = validate_assumptions(get_problem("heat2d-x2"), PLAN)
    decay = report.check("sigma-z-decay")
    assert not decay.skipped and decay.passed


def test_non_finite_coefficient_is_reported() -> None:
    c = get_problem("heat-x2")
    bad = c.with_(g=lambda x: np.where(x[:, 0] > 0, np.inf, 0.0))
    with pytest.raises(InvalidCoefficientError) as info:
        validate_assumptions(bad, PLAN)
    assert info.value.context["coefficient"] == "g"


def test_bump_rule_is_a_probability_rule() -> None:
    s, w = bump_rule(33)
    assert_allclose(w.sum(), 1.0)
    assert_allclose(np.sum(w * s), 0.0, atol=1e-15)
    assert np.all(w > 0)


def test_mollify_meets_targets() -> None:
    c = get_problem("example-2.1")
    n = 4
    smooth = mollify(c, n, 0.05, PLAN)
    z = np.linspace(-3.0, 3.0, 61)[:, None]
    x = np.zeros_like(z)
    s0 = c.evaluate(0.3, x, 0.0, z).sigma[:, 0, 0]
    s1 = smooth.evaluate(0.3, x, 0.0, z).sigma[:, 0, 0]
    assert np.max(np.abs(s1 - s0)) <= 0.1
    assert smooth.meta["mollified_n"] == n
    assert "sigma" in smooth.meta["bandwidths"]
    assert "f" not in smooth.meta["bandwidths"]


def test_mollify_rejects_bad_index() -> None:
    with pytest.raises(DomainError):
        mollify(get_problem("heat-x"), 0, 0.1)
    with pytest.raises(DomainError):
        mollify(get_problem("heat-x"), 2, 0.0)


@settings(max_examples=25, deadline=None)
@given(n=st.integers(min_value=1, max_value=50), alpha=st.floats(min_value=0.0, max_value=1.0))
def test_shift_moves_f_and_g_by_the_nodal_amounts(n: int, alpha: float) -> None:
    c = get_problem("heat-x")
    shifted = shift_coefficients(c, n, alpha)
    x = np.array([[0.3], [-1.0]])
    assert_allclose(shifted.terminal(x) - c.terminal(x), (2 * alpha - 1) / n, atol=1e-14)
    f = shifted.evaluate(0.0, x, 0.0, 0.0).f
    assert_allclose(f, (2 * alpha - 1) * 2 / n, atol=1e-14)


def test_shift_rejects_alpha_outside_unit_interval() -> None:
    with pytest.raises(DomainError):
        shift_coefficients(get_problem("heat-x"), 3, 1.5)


def test_remove_drift_returns_girsanov_kernel() -> None:
    c = get_problem("drift-k", k=0.5)
    stripped, kernel = remove_drift(c, PLAN)
    z = np.array([[0.2], [-1.0]])
    x = np.zeros((2, 1))
    assert_allclose(kernel(0.0, x, np.zeros(2), z)[:, 0], -(z[:, 0] + 0.5))
    assert_allclose(stripped.evaluate(0.0, x, 0.0, z).b, 0.0)
    assert stripped.meta["drift_removed"]


def test_remove_drift_needs_invertible_sigma() -> None:
    with pytest.raises(EllipticityError):
        remove_drift(get_problem("example-2.1-degenerate"), PLAN)


def test_weak_to_strong_inverts_z_sigma() -> None:
    c = get_problem("example-2.1")
    out = weak_to_strong(c)
    assert isinstance(out, StrongForm)
    z = np.array([-1.0, 0.25, 1.5, 3.0])
    theta = z * np.clip(z, 0.5, 2.0)
    back = out.psi(0.0, np.zeros((4, 1)), np.zeros(4), theta)
    assert_allclose(back, z, atol=1e-9)
    sig = out.coeffs.evaluate(0.0, np.zeros((4, 1)), 0.0, theta[:, None]).sigma[:, 0, 0]
    assert_allclose(sig, np.clip(z, 0.5, 2.0), atol=1e-8)


def test_weak_to_strong_reports_non_monotone_map() -> None:
    out = weak_to_strong(get_problem("example-2.1-degenerate"))
    assert isinstance(out, NotInvertible)
    lo, hi = out.interval
    assert lo < hi <= 0.0


def test_weak_to_strong_is_one_dimensional() -> None:
    with pytest.raises(ConfigurationError):
        weak_to_strong(get_problem("heat2d-x2"))
