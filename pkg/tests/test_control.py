#!filepath: tests/test_control.py
from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from weakfbsde_app.control.experiments import (
    BlockAverage,
    diffusion_control_experiment,
    drift_control_experiment,
    hamiltonian_probes,
    hamiltonian_table,
    second_derivative_error,
    tsirelson_fbsde_residual,
    weak_drift_value,
)
from weakfbsde_app.control.hamiltonians import (
    adjoint_transform,
    f_star,
    hamiltonian_H,
    hamiltonian_hat,
    hamiltonian_tilde,
    inverse_adjoint_transform,
)
from weakfbsde_app.control.maximize import maximize
from weakfbsde_app.control.spec import (
    SPEC_FACTORIES,
    diffusion_control_spec,
    double_integral_on_axis,
    drift_control_spec,
    singleton_spec,
)
from weakfbsde_app.errors import DegenerateSigmaError, DomainError
from weakfbsde_app.pde.grid import TimeSpaceGrid

K = 0.5


def test_maximize_refines_interior_and_keeps_boundary_maxima() -> None:
    centres = np.array([[-0.3], [0.77], [1.5]])
    best = maximize(lambda a: -((a - centres) ** 2), np.linspace(-1.0, 1.0, 64), 3)
    assert_allclose(best.argmax, [-0.3, 0.77, 1.0], atol=1e-9)
    assert_allclose(best.value, [0.0, 0.0, -0.25], atol=1e-12)
    assert best.argmax[2] == 1.0


def test_drift_hamiltonians_match_closed_forms() -> None:
    spec = drift_control_spec(K)
    z = np.array([-1.5, -0.2, 0.0, 0.9, 1.8])
    gamma = np.array([0.3, -1.0, 2.0, 0.0, -0.4])
    H, arg = hamiltonian_H(spec, 0.0, z, gamma)
    assert_allclose(H, 0.5 * gamma + K * z + 0.5 * z**2, atol=1e-10)
    assert_allclose(arg, K + z, atol=1e-6)
    fs, _ = f_star(spec, 0.0, z)
    assert_allclose(fs, K * z + 0.5 * z**2, atol=1e-10)
    Ht, _ = hamiltonian_tilde(spec, 0.0, z, gamma)
    assert_allclose(Ht, gamma + K * z + 0.5 * z**2, atol=1e-10)


def test_hat_hamiltonian_is_bitwise_h() -> None:
    spec = diffusion_control_spec(0.75)
    probes = hamiltonian_probes(spec, 32, seed=4)
    H, _ = hamiltonian_H(spec, 0.0, probes["z"], probes["gamma"], probes["x"])
    Hh, _ = hamiltonian_hat(spec, 0.0, probes["z"], probes["gamma"], probes["x"])
    assert_array_equal(H, Hh)


def test_singleton_control_set_evaluates_the_objective() -> None:
    spec = singleton_spec(drift_control_spec(K), 0.5)
    assert spec.singleton
    H, arg = hamiltonian_H(spec, 0.0, np.array([1.0, -2.0]), np.array([0.4, 0.4]))
    assert_allclose(H, [0.2 + 0.5, 0.2 - 1.0])
    assert_allclose(arg, 0.5)


def test_spec_validation() -> None:
    with pytest.raises(DomainError):
        drift_control_spec(K, half_width=-1.0)
    with pytest.raises(DomainError):
        drift_control_spec(K, n_controls=1)
    assert set(SPEC_FACTORIES) == {"drift-k", "barlow-diffusion"}
    assert diffusion_control_spec(0.75).control_hi == pytest.approx(3.0)


def test_adjoint_transform() -> None:
    y, z = adjoint_transform(2.0, 1.0, 4.0)
    assert (float(y), float(z)) == (1.0, 2.0)
    y, z = inverse_adjoint_transform(2.0, y, z)
    assert float(z) == 4.0
    with pytest.raises(DegenerateSigmaError):
        adjoint_transform(0.0, 1.0, 1.0)
    with pytest.raises(DegenerateSigmaError):
        inverse_adjoint_transform(np.array([1.0, -1.0]), 0.0, 0.0)


def test_double_integral_of_unit_density() -> None:
    axis = np.linspace(-2.0, 2.0, 41)
    g = double_integral_on_axis(axis, lambda x: np.ones_like(x))
    assert_allclose(g, 0.5 * axis**2, atol=1e-12)


def test_barlow_terminal_has_the_right_curvature() -> None:
    assert second_derivative_error(0.75) < 1e-6
    spec = diffusion_control_spec(0.75)
    assert_allclose(spec.g(np.array([0.0])), 0.0, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(
    sigma=st.floats(min_value=1e-3, max_value=1e3),
    y=st.floats(min_value=-1e3, max_value=1e3),
    z=st.floats(min_value=-1e3, max_value=1e3),
)
def test_adjoint_transform_is_a_bijection(sigma: float, y: float, z: float) -> None:
    back_y, back_z = inverse_adjoint_transform(sigma, *adjoint_transform(sigma, y, z))
    assert float(back_y) == y
    assert float(back_z) == pytest.approx(z, rel=1e-12, abs=1e-12)


@settings(max_examples=30, deadline=None)
@given(z1=st.floats(min_value=-3.0, max_value=3.0), z2=st.floats(min_value=-3.0, max_value=3.0))
def test_f_star_is_convex(z1: float, z2: float) -> None:
    spec = drift_control_spec(K)
    vals, _ = f_star(spec, 0.0, np.array([z1, z2, 0.5 * (z1 + z2)]))
    assert vals[2] <= 0.5 * (vals[0] + vals[1]) + 1e-9


def test_drift_table_gaps() -> None:
    spec = drift_control_spec(K)
    table = hamiltonian_table(spec, hamiltonian_probes(spec, 40, seed=1))
    assert np.all(table["gap_hat"] == 0.0)
    assert_allclose(table["gap_tilde"], 0.5 * np.abs(table["gamma"]), atol=1e-9)
    assert_allclose(table["f_star"], K * table["z"] + 0.5 * table["z"] ** 2, atol=1e-10)
    assert np.min(table["H_enlarged"] - table["H"]) >= -1e-10


def test_barlow_table_separates_tilde_from_h() -> None:
    spec = diffusion_control_spec(0.75)
    table = hamiltonian_table(spec, hamiltonian_probes(spec, 40, seed=2))
    assert np.all(table["gap_tilde"] > 1e-3)
    assert np.all(table["gap_hat"] == 0.0)
    assert_allclose(table["H"], 0.0, atol=1e-8)


def test_block_average_controls() -> None:
    rng = np.random.default_rng(0)
    Kpath = rng.uniform(size=(4, 8))
    ctrl = BlockAverage(4)
    along = ctrl.along(Kpath)
    for k in range(8):
        assert_allclose(along[:, k], ctrl.at(k, Kpath))
    assert_allclose(along[:, :2], 0.0)
    assert_allclose(along[:, 2], Kpath[:, :2].mean(axis=1))
    with pytest.raises(DomainError):
        BlockAverage(3).block_length(8)


def test_weak_value_of_the_optimal_constant_control() -> None:
    out = weak_drift_value(K, K, n_steps=16, n_paths=512, seed=2, fstar_paths=256)
    assert out.value == 0.0 and out.standard_error == 0.0
    assert abs(out.fstar_value) < 1e-12


def test_weak_value_of_a_suboptimal_constant_control() -> None:
    out = weak_drift_value(0.0, K, n_steps=16, n_paths=512, seed=2, fstar_paths=256)
    assert out.value == pytest.approx(-0.125, abs=1e-12)
    assert out.unweighted == pytest.approx(-0.125, abs=1e-12)


def test_tsirelson_fbsde_has_zero_solution() -> None:
    assert tsirelson_fbsde_residual(1.0, 6, 16, 128, seed=0) == 0.0


def test_drift_experiment_small() -> None:
    res = drift_control_experiment(levels=(1, 2), n_paths=256, seed=3, depth=6, n_steps=16, fbsde_paths=128)
    assert res.value_weak == 0.0
    assert [v.n for v in res.values_strong_sequence] == [1, 2]
    assert all(v.value <= 0.0 for v in res.values_strong_sequence)
    assert res.values_weak_sequence[0].value == pytest.approx(res.values_strong_sequence[0].value)
    assert res.details["fbsde_residual_sup"] == 0.0
    rec = res.to_record()
    assert rec["name"] == "drift" and len(rec["values_weak_sequence"]) == 2


def test_drift_experiment_rejects_uneven_levels() -> None:
    with pytest.raises(DomainError):
        drift_control_experiment(levels=(3,), n_paths=16, n_steps=16)


@pytest.mark.slow
def test_strong_values_rise_towards_the_weak_value() -> None:
    res = drift_control_experiment(levels=(1, 2, 4, 8, 16), n_paths=4096, seed=0, n_steps=256)
    seq = res.values_strong_sequence
    assert -0.2 <= seq[0].value <= -0.13
    for lo, hi in zip(seq, seq[1:]):
        assert hi.value > lo.value
    assert -0.05 <= seq[-1].value <= 0.0
    assert abs(seq[-1].value) < abs(seq[0].value) / 3.0
    for strong, weak in zip(seq, res.values_weak_sequence):
        assert abs(strong.value - weak.value) < 5.0 * (strong.standard_error + weak.standard_error) + 1e-3


@pytest.mark.slow
def test_diffusion_experiment_martingale_check() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 20, 81, -2.0, 2.0)
    res = diffusion_control_experiment(0.75, grid=grid, n_paths=4096, seed=1, n_t_mc=10)
    assert res.checks[0].passed, res.checks[0].to_record()
    assert res.details["sup_gap_to_g"] < 1e-6
    assert abs(res.value_hjb) < 1e-6
    assert abs(res.value_weak) < 5.0 * res.value_weak_se + 1e-3
