#!filepath: tests/test_pde.py
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from numpy.testing import assert_allclose

from weakfbsde_app.control.spec import diffusion_control_spec, drift_control_spec
from weakfbsde_app.errors import ConfigurationError, DomainError, GridError, PicardDivergenceError
from weakfbsde_app.pde.diagnostics import grid_refinement_study, pde_residual, regularity_estimates
from weakfbsde_app.pde.field import DecouplingField
from weakfbsde_app.pde.grid import TimeSpaceGrid, parse_grid, require_pde_dim
from weakfbsde_app.pde.hjb import solve_hjb
from weakfbsde_app.pde.quasilinear import PicardOptions, quintic_cutoff, solve_quasilinear
from weakfbsde_app.problem.catalog import get_problem


def test_parse_grid() -> None:
    g = parse_grid("20,41,-2,3", T=0.5)
    assert g.n_t == 20 and g.n_x == (41,)
    assert g.lo == (-2.0,) and g.hi == (3.0,)
    assert g.T == 0.5
    with pytest.raises(GridError):
        parse_grid("20,41,-2")
    with pytest.raises(GridError):
        parse_grid("a,41,-2,2")
    with pytest.raises(GridError):
        parse_grid("20,41,2,-2")


def test_grid_rejects_large_dimension() -> None:
    with pytest.raises(GridError):
        require_pde_dim(TimeSpaceGrid.uniform(1.0, 2, 3, -1, 1, dim=3))


def test_grid_helpers() -> None:
    g = TimeSpaceGrid.uniform(1.0, 10, 5, -1.0, 1.0)
    assert g.time_index(0.3) == 3
    with pytest.raises(GridError):
        g.time_index(0.35)
    fine = g.refine()
    assert fine.n_t == 20 and fine.n_x == (9,)
    assert TimeSpaceGrid.from_dict(g.to_dict()) == g
    assert g.boundary_mask().sum() == 2


def test_heat_x2_is_reproduced_exactly(small_grid: TimeSpaceGrid) -> None:
    c = get_problem("heat-x2")
    field = solve_quasilinear(c, small_grid)
    exact = small_grid.axes[0][None, :] ** 2 + (1.0 - small_grid.times)[:, None]
    assert_allclose(field.u, exact, atol=1e-9)
    assert field.meta["linear"] is True
    assert field.meta["picard_iters_used"] == 1
    assert pde_residual(field, c).sup_residual < 1e-7


def test_crank_nicolson_matches_backward_euler_on_polynomial(small_grid: TimeSpaceGrid) -> None:
    c = get_problem("heat-x2")
    be = solve_quasilinear(c, small_grid)
    cn = solve_quasilinear(c, small_grid, PicardOptions(theta=0.5))
    assert_allclose(cn.u, be.u, atol=1e-9)
    assert cn.meta["theta"] == 0.5


def test_heat_cos_converges() -> None:
    c = get_problem("heat-cos")
    grid = TimeSpaceGrid.uniform(0.5, 100, 161, -4.0, 4.0)
    field = solve_quasilinear(c, grid)
    x = np.linspace(-1.0, 1.0, 21)[:, None]
    exact = np.exp(-0.25) * np.cos(x[:, 0])
    assert_allclose(field.value(0.0, x), exact, atol=2e-3)


def test_refinement_reduces_error() -> None:
    c = get_problem("heat-cos")
    coarse = TimeSpaceGrid.uniform(0.5, 10, 41, -4.0, 4.0)

    def oracle(t: float, x: np.ndarray) -> np.ndarray:
        return np.exp(-0.5 * (0.5 - t)) * np.cos(x[:, 0])

    study = grid_refinement_study(c, [coarse, coarse.refine(), coarse.refine(4)], oracle, inner=0.25)
    assert study.errors[0] > study.errors[1] > study.errors[2]
    assert all(r > 1.5 for r in study.ratios)


def test_sigma_z_clipped_has_linear_solution(small_grid: TimeSpaceGrid) -> None:
    field = solve_quasilinear(get_problem("example-2.1"), small_grid)
    exact = np.broadcast_to(small_grid.axes[0], field.u.shape)
    assert_allclose(field.u, exact, atol=1e-6)
    assert_allclose(field.du[..., 0], 1.0, atol=1e-6)


def test_nonlinear_problem_uses_picard(small_grid: TimeSpaceGrid) -> None:
    field = solve_quasilinear(get_problem("quasilinear-demo"), small_grid)
    assert field.meta["picard_iters_used"] > 1
    assert np.all(np.isfinite(field.u))
    assert np.max(np.abs(field.u)) <= 1.0 + 1e-9


def test_picard_cap_raises_with_residual(small_grid: TimeSpaceGrid) -> None:
    with pytest.raises(PicardDivergenceError) as info:
        solve_quasilinear(get_problem("quasilinear-demo"), small_grid, PicardOptions(picard_max=1, picard_tol=1e-14))
    assert info.value.residual > 0.0


def test_options_are_validated() -> None:
    with pytest.raises(DomainError):
        PicardOptions(theta=0.3)
    with pytest.raises(DomainError):
        PicardOptions(damping=0.0)
    with pytest.raises(ConfigurationError):
        PicardOptions(boundary="periodic")


def test_path_dependent_problem_has_no_pde(small_grid: TimeSpaceGrid) -> None:
    with pytest.raises(ConfigurationError):
        solve_quasilinear(get_problem("tsirelson"), small_grid)


def test_dimension_mismatch(small_grid: TimeSpaceGrid) -> None:
    with pytest.raises(GridError):
        solve_quasilinear(get_problem("heat2d-x2"), small_grid)


def test_two_dimensional_heat() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 10, 17, -2.0, 2.0, dim=2)
    field = solve_quasilinear(get_problem("heat2d-x2"), grid)
    pts = grid.points()
    exact0 = np.sum(pts**2, axis=1) + 2.0
    assert_allclose(field.u[0].reshape(-1), exact0, atol=1e-8)


def test_cutoff_boundary_vanishes_on_faces() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 10, 41, -4.0, 4.0)
    x = np.array([[-4.0], [0.0], [3.5], [4.0]])
    assert_allclose(quintic_cutoff(grid, x), [0.0, 1.0, 1.0, 0.0])
    field = solve_quasilinear(get_problem("heat-x2"), grid, PicardOptions(boundary="cutoff"))
    assert_allclose(field.u[:-1, [0, -1]], 0.0, atol=1e-12)
    assert field.meta["boundary"] == "cutoff"


def test_field_roundtrip_and_interpolation(tmp_path: Path, small_grid: TimeSpaceGrid) -> None:
    field = DecouplingField.from_function(small_grid, lambda t, x: 2.0 * x[:, 0] + t)
    path = field.save(tmp_path / "field.txt")
    back = DecouplingField.load(path)
    assert back.grid == small_grid
    assert_allclose(back.u, field.u)
    assert_allclose(back.value(0.25, np.array([[0.33]])), [0.91], atol=1e-12)
    assert_allclose(back.gradient(0.5, np.array([[1.1]])), [[2.0]], atol=1e-12)
    assert back.value(0.0, np.array([[10.0]]))[0] == pytest.approx(8.0)


def test_regularity_estimates(small_grid: TimeSpaceGrid) -> None:
    field = solve_quasilinear(get_problem("heat-x2"), small_grid)
    rep = regularity_estimates(field, alpha=0.5, delta=0.2, max_pairs=20_000, seed=1)
    assert rep.sup_u == pytest.approx(17.0)
    assert rep.sup_du == pytest.approx(8.0, rel=1e-6)
    assert rep.sampled
    assert rep.holder_alpha_du > 0.0
    with pytest.raises(DomainError):
        regularity_estimates(field, alpha=0.5, delta=1.5)


def test_hjb_drift_control_with_zero_terminal_is_zero(small_grid: TimeSpaceGrid) -> None:
    field = solve_hjb(drift_control_spec(0.5), small_grid)
    assert_allclose(field.u, 0.0, atol=1e-12)
    assert_allclose(field.control[:, 1:-1], 0.5, atol=1e-6)


def test_hjb_diffusion_control_keeps_terminal_value() -> None:
    spec = diffusion_control_spec(0.75)
    grid = TimeSpaceGrid.uniform(1.0, 20, 81, -2.0, 2.0)
    field = solve_hjb(spec, grid)
    g = spec.terminal_on_axis(grid.axes[0])
    assert np.max(np.abs(field.u - g[None, :])) < 1e-6
    assert field.meta["policy_rounds_used"] <= 30
    assert np.all(field.control >= 1.0 - 1e-12)


def test_hjb_is_one_dimensional() -> None:
    with pytest.raises(GridError):
        solve_hjb(drift_control_spec(), TimeSpaceGrid.uniform(1.0, 2, 5, -1, 1, dim=2))
