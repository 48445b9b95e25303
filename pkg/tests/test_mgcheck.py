#!filepath: tests/test_mgcheck.py
from __future__ import annotations

import numpy as np
import pytest
from numpy.testing import assert_allclose

from weakfbsde_app.errors import ConfigurationError, DomainError, InsufficientSampleError, OutOfNodalSetError
from weakfbsde_app.mgcheck.checks import (
    check_cross_variation,
    check_martingale,
    check_quadratic_variation,
    cross_variation_refinement,
    family_threshold,
    feynman_kac_residual,
    moment_bounds,
)
from weakfbsde_app.mgcheck.nodal import nodal_bounds, nodal_family, nodal_select
from weakfbsde_app.mgcheck.report import CheckReport
from weakfbsde_app.pde.field import DecouplingField
from weakfbsde_app.pde.grid import TimeSpaceGrid
from weakfbsde_app.problem.catalog import get_problem
from weakfbsde_app.simulate.bundle import PathBundle, time_partition
from weakfbsde_app.pde.quasilinear import solve_quasilinear
from weakfbsde_app.problem.transforms import mollify
from weakfbsde_app.simulate.euler import build_fbsde_solution, euler_forward


@pytest.fixture(scope="module")
def linear_field() -> DecouplingField:
    grid = TimeSpaceGrid.uniform(1.0, 20, 161, -8.0, 8.0)
    return DecouplingField.from_function(grid, lambda t, x: x[:, 0])


@pytest.fixture(scope="module")
def heat_bundle(linear_field: DecouplingField) -> PathBundle:
    times = time_partition(1.0, n_steps=20)
    return build_fbsde_solution(linear_field, get_problem("heat-x"), 0.0, times, 2000, seed=21)


def test_family_threshold_grows_with_family_size() -> None:
    assert family_threshold(5.0, 1) == pytest.approx(5.0)
    assert family_threshold(5.0, 100) > family_threshold(5.0, 10) > 5.0


def test_exact_solution_passes_every_check(heat_bundle: PathBundle, linear_field: DecouplingField) -> None:
    c = get_problem("heat-x")
    reports = [
        check_martingale(heat_bundle, c, "MX"),
        check_martingale(heat_bundle, c, "MY"),
        check_quadratic_variation(heat_bundle, c),
        check_cross_variation(heat_bundle, linear_field),
    ]
    for rep in reports:
        assert rep.passed, rep.to_record()
    mx = reports[0]
    assert mx.details["family_size"] >= heat_bundle.n_t
    assert mx.details["family_threshold"] > mx.threshold
    assert abs(reports[3].statistic) < 1e-12


def test_injected_drift_is_rejected(heat_bundle: PathBundle) -> None:
    drifted = heat_bundle.with_(Y=heat_bundle.Y + 5.0 * heat_bundle.times[None, :])
    rep = check_martingale(drifted, get_problem("heat-x"), "MY")
    assert not rep.passed
    assert rep.statistic == pytest.approx(5.0, abs=0.2)
    assert rep.z_score > rep.threshold
    assert_allclose(rep.details["per_step_mean"], 0.25, atol=0.05)


def test_unknown_martingale_name(heat_bundle: PathBundle) -> None:
    with pytest.raises(ConfigurationError):
        check_martingale(heat_bundle, get_problem("heat-x"), "MZ")  # type: ignore[arg-type]


def test_small_ensembles_are_refused(linear_field: DecouplingField) -> None:
    times = time_partition(1.0, n_steps=5)
    small = build_fbsde_solution(linear_field, get_problem("heat-x"), 0.0, times, 50, seed=0)
    with pytest.raises(InsufficientSampleError):
        check_martingale(small, get_problem("heat-x"))
    with pytest.raises(InsufficientSampleError):
        check_quadratic_variation(small, get_problem("heat-x"))


def test_cross_variation_needs_a_field(heat_bundle: PathBundle) -> None:
    with pytest.raises(ConfigurationError):
        check_cross_variation(heat_bundle, None)


def test_feynman_kac_residual(heat_bundle: PathBundle, linear_field: DecouplingField) -> None:
    rep = feynman_kac_residual(heat_bundle, linear_field)
    assert rep.passed and rep.form == "upper-bound"
    assert rep.statistic < 1e-10
    shifted = feynman_kac_residual(heat_bundle.with_(Y=heat_bundle.Y + 0.01), linear_field)
    assert not shifted.passed
    assert shifted.details["sup_y"] == pytest.approx(0.01)


def test_moment_bounds(heat_bundle: PathBundle) -> None:
    m = moment_bounds(heat_bundle, p=2.0)
    assert m["sup_n"] == 0.0
    assert m["z_energy"] == pytest.approx(1.0)
    assert m["sup_y"] == pytest.approx(m["sup_x"])
    with pytest.raises(ConfigurationError):
        moment_bounds(heat_bundle, p=0.5)


def test_cross_variation_gap_shrinks_with_the_step() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 40, 241, -6.0, 6.0)
    field = DecouplingField.from_function(grid, lambda t, x: x[:, 0] ** 2 + (1.0 - t))
    study = cross_variation_refinement(get_problem("heat-x2"), field, 0.0, dt=0.1, n_paths=512, seed=3, levels=3)
    assert_allclose(study.dts, [0.1, 0.05, 0.025])
    assert study.gaps[0] > study.gaps[1] > study.gaps[2]
    assert all(r > 1.3 for r in study.ratios)


def test_check_report_record() -> None:
    rep = CheckReport("martingale-MX", 0.1, 0.05, 5.0, True)
    assert rep.z_score == pytest.approx(2.0)
    rec = rep.to_record()
    assert rec["pass"] is True and rec["form"] == "two-sided"
    assert CheckReport("fk", 0.0, 0.0, 1e-8, True, form="upper-bound").z_score == 0.0


def test_nodal_interval_of_the_heat_problem() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 10, 41, -4.0, 4.0)
    n = 10
    res = nodal_bounds(get_problem("heat-x"), grid, 0.0, 0.0, n)
    assert res.u_lower == pytest.approx(-3.0 / n, abs=1e-9)
    assert res.u_upper == pytest.approx(3.0 / n, abs=1e-9)
    assert res.width == pytest.approx(6.0 / n, abs=1e-9)
    assert res.contains(0.0)
    assert res.c_n < 1e-8 and not res.remollified
    assert res.eps_n == pytest.approx(0.1)


def test_nodal_select_bisects_alpha() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 10, 41, -4.0, 4.0)
    res = nodal_select(get_problem("heat-x"), grid, 0.0, 0.0, y_target=0.0, n=10)
    assert res.alpha_star == pytest.approx(0.5)
    assert res.iterations == 1
    edge = nodal_select(get_problem("heat-x"), grid, 0.0, 0.0, y_target=0.3, n=10)
    assert edge.alpha_star == 1.0 and edge.iterations == 0
    with pytest.raises(OutOfNodalSetError):
        nodal_select(get_problem("heat-x"), grid, 0.0, 0.0, y_target=1.0, n=10)


def test_nodal_rejects_points_outside_the_grid() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 10, 41, -4.0, 4.0)
    with pytest.raises(DomainError):
        nodal_bounds(get_problem("heat-x"), grid, 0.0, 10.0, 5)
    with pytest.raises(DomainError):
        nodal_bounds(get_problem("heat-x"), grid, 2.0, 0.0, 5)


def test_nodal_family_is_ordered_in_alpha() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 10, 41, -4.0, 4.0)
    fields = nodal_family(get_problem("heat-x"), grid, 4, [0.0, 0.25, 1.0])
    at0 = [float(f.value(0.0, np.array([[0.5]]))[0]) for f in fields]
    assert_allclose(at0, [0.5 - 0.75, 0.5 - 0.375, 0.5 + 0.75], atol=1e-9)


@pytest.mark.parametrize("pid", ["heat-x2", "example-2.1"])
def test_shifted_solutions_bracket_the_mollified_solve(pid: str) -> None:
    grid = TimeSpaceGrid.uniform(1.0, 10, 41, -4.0, 4.0)
    n = 4
    c = get_problem(pid)
    direct = solve_quasilinear(mollify(c, n, 1.0 / n), grid)
    lower, middle, upper = nodal_family(c, grid, n, [0.0, 0.5, 1.0])
    assert_allclose(middle.u, direct.u, atol=1e-9)
    assert np.all(lower.u <= direct.u + 1e-9)
    assert np.all(direct.u <= upper.u + 1e-9)
    assert np.max(upper.u - lower.u) > 1.0 / n


def test_nodal_width_scales_like_one_over_n() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 10, 41, -4.0, 4.0)
    c = get_problem("heat-x")
    for n in (5, 10, 20, 40):
        res = nodal_bounds(c, grid, 0.0, 0.0, n)
        assert res.width * n == pytest.approx(6.0, abs=1e-7)
        terminal = nodal_bounds(c, grid, 1.0, 0.5, n)
        assert terminal.u_lower == pytest.approx(0.5 - 1.0 / n, abs=1e-9)
        assert terminal.u_upper == pytest.approx(0.5 + 1.0 / n, abs=1e-9)


def test_martingale_check_rarely_rejects_brownian_motion() -> None:
    c = get_problem("heat-x")
    times = time_partition(1.0, n_steps=10)
    failures = 0
    for seed in range(100):
        bundle = euler_forward(c, None, 0.0, times, 1000, seed=seed)
        failures += not check_martingale(bundle, c, "MX", threshold=3.0).passed
    assert failures <= 5
