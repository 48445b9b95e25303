#!filepath: tests/test_simulate.py
from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose, assert_array_equal

from weakfbsde_app.errors import ConfigurationError, DomainError, GirsanovOverflowError
from weakfbsde_app.pde.field import DecouplingField
from weakfbsde_app.pde.grid import TimeSpaceGrid
from weakfbsde_app.problem.catalog import get_problem
from weakfbsde_app.simulate.backward import backward_recursion
from weakfbsde_app.simulate.bundle import (
    PathBundle,
    brownian_increments,
    normal_chunks,
    standard_normals,
    time_partition,
)
from weakfbsde_app.simulate.euler import build_fbsde_solution, euler_forward
from weakfbsde_app.simulate.functionals import (
    DiscretePath,
    PathFunctional,
    barlow_sigma,
    barlow_truncation,
    fractional_part,
    tent,
    tsirelson_drift,
)
from weakfbsde_app.simulate.girsanov import girsanov_log_weight, girsanov_weight
from weakfbsde_app.simulate.martingale import martingale_parts, recover_brownian, residual_orthogonal_martingale
from weakfbsde_app.simulate.timechange import time_change_paths


def _linear_field(T: float = 1.0) -> DecouplingField:
    grid = TimeSpaceGrid.uniform(T, 10, 81, -8.0, 8.0)
    return DecouplingField.from_function(grid, lambda t, x: x[:, 0])


def test_time_partition() -> None:
    assert_allclose(time_partition(1.0, dt=0.25), [0.0, 0.25, 0.5, 0.75, 1.0])
    assert time_partition(1.0, dt=0.3).size == 5
    assert time_partition(2.0, n_steps=8)[-1] == 2.0
    with pytest.raises(DomainError):
        time_partition(1.0)


def test_paths_do_not_depend_on_ensemble_size() -> None:
    small = standard_normals(7, 1000, (4,))
    large = standard_normals(7, 3000, (4,))
    assert_array_equal(small, large[:1000])
    assert not np.array_equal(large[:1024], large[1024:2048])


def test_normal_chunks_cover_the_same_stream() -> None:
    full = standard_normals(3, 2500, (2, 1))
    pieces = list(normal_chunks(3, 2500, (2, 1), chunk_blocks=1))
    assert [(a, b) for a, b, _ in pieces] == [(0, 1024), (1024, 2048), (2048, 2500)]
    assert_array_equal(np.concatenate([p for _, _, p in pieces]), full)


def test_brownian_increments_scale() -> None:
    times = time_partition(1.0, n_steps=4)
    dB = brownian_increments(0, 4096, times)
    assert dB.shape == (4096, 4, 1)
    assert np.var(dB) == pytest.approx(0.25, rel=0.05)


@settings(max_examples=50, deadline=None)
@given(st.floats(min_value=-1e6, max_value=1e6, allow_nan=False))
def test_fractional_part_stays_in_unit_interval(x: float) -> None:
    v = float(fractional_part(x))
    assert 0.0 <= v < 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=-4096, max_value=4096), st.sampled_from([0.72, 0.75, 0.9]))
def test_barlow_sigma_is_one_periodic_on_dyadics(k: int, lam: float) -> None:
    f = PathFunctional.barlow(lam)
    x = np.array([k / 1024.0])
    assert barlow_sigma(f, x + 1.0)[0] == barlow_sigma(f, x)[0]
    lo, hi = f.sigma_range
    assert lo <= barlow_sigma(f, x)[0] <= hi


def test_tent_and_barlow_sigma_range() -> None:
    assert_allclose(tent(np.array([0.0, 0.25, 0.5, 0.75])), [0.0, 0.25, 0.5, 0.25])
    f = PathFunctional.barlow(0.75)
    assert f.truncation == barlow_truncation(0.75)
    x = np.linspace(-3.0, 3.0, 2001)
    s = barlow_sigma(f, x)
    lo, hi = f.sigma_range
    assert np.all(s >= lo) and np.all(s <= hi)
    assert_allclose(barlow_sigma(f, 0.0), 1.0)
    assert_allclose(barlow_sigma(f, 0.5), 1.5, atol=1e-12)
    with pytest.raises(DomainError):
        PathFunctional.barlow(0.6)


def test_tsirelson_drift_reads_the_last_partition_interval() -> None:
    f = PathFunctional.tsirelson(1.0, depth=5)
    times = np.linspace(0.0, 1.0, 65)
    slope = 1.75
    path = DiscretePath(times=times, values=np.vstack([slope * times, 0.25 * times]))
    # t in [1/4, 1/2): increment over [1/8, 1/4]
    out = tsirelson_drift(f, 0.3, path)
    assert_allclose(out, [0.75, 0.25])
    assert_allclose(tsirelson_drift(f, 1e-4, path), [0.0, 0.0])
    with pytest.raises(DomainError):
        tsirelson_drift(f, 0.0, path)


def test_custom_functional() -> None:
    f = PathFunctional.custom(lambda t, path: path(t) * 2.0)
    path = DiscretePath(times=np.array([0.0, 1.0]), values=np.array([[0.0, 1.0]]))
    assert_allclose(f(0.5, path), [1.0])


def test_euler_on_heat_follows_brownian_motion() -> None:
    c = get_problem("heat-x2")
    times = time_partition(1.0, n_steps=20)
    bundle = euler_forward(c, None, 0.5, times, 512, seed=11)
    assert_allclose(bundle.X[:, -1, 0], 0.5 + np.sum(bundle.dB[:, :, 0], axis=1), atol=1e-12)
    assert bundle.alive is None and bundle.exit_fraction == 0.0
    again = euler_forward(c, None, 0.5, times, 512, seed=11)
    assert_array_equal(again.X, bundle.X)


def test_forward_coupled_problem_needs_a_field() -> None:
    times = time_partition(1.0, n_steps=4)
    with pytest.raises(ConfigurationError):
        euler_forward(get_problem("drift-k"), None, 0.0, times, 128, seed=0)


def test_tsirelson_paths_record_the_drift() -> None:
    c = get_problem("tsirelson", depth=6)
    times = time_partition(1.0, n_steps=32)
    bundle = euler_forward(c, None, 0.0, times, 256, seed=2)
    assert bundle.drift_path.shape == (256, 32)
    assert np.all(bundle.drift_path >= 0.0) and np.all(bundle.drift_path < 1.0)
    assert_allclose(bundle.drift_path[:, 0], 0.0)
    drift = np.cumsum(bundle.drift_path * np.diff(times), axis=1)
    assert_allclose(bundle.X[:, 1:, 0], np.cumsum(bundle.dB[:, :, 0], axis=1) + drift, atol=1e-12)


def test_fbsde_solution_has_zero_orthogonal_part() -> None:
    c = get_problem("heat-x")
    times = time_partition(1.0, n_steps=10)
    bundle = residual_orthogonal_martingale(build_fbsde_solution(_linear_field(), c, 0.0, times, 256, seed=4), c)
    assert_allclose(bundle.Y, bundle.X[..., 0], atol=1e-12)
    assert_allclose(bundle.Z, 1.0, atol=1e-12)
    assert np.max(np.abs(bundle.N)) < 1e-10
    assert bundle.meta["fbsde"] is True


def test_paths_leaving_the_box_are_absorbed() -> None:
    grid = TimeSpaceGrid.uniform(1.0, 4, 9, -0.5, 0.5)
    field = DecouplingField.from_function(grid, lambda t, x: x[:, 0])
    times = time_partition(1.0, n_steps=20)
    bundle = build_fbsde_solution(field, get_problem("heat-x"), 0.0, times, 256, seed=0)
    assert bundle.exit_fraction > 0.5
    assert bundle.warnings and bundle.warnings[0].startswith("domain-too-small")
    assert np.all(np.abs(bundle.X) <= 0.5 + 1e-12)


def test_martingale_parts_and_brownian_recovery() -> None:
    c = get_problem("hedging")
    times = time_partition(1.0, n_steps=16)
    bundle = euler_forward(c, None, 1.0, times, 2048, seed=5)
    parts = martingale_parts(bundle, c)
    assert_allclose(parts.MX, bundle.X, atol=1e-12)
    rec = recover_brownian(bundle, c)
    assert_allclose(rec.increments, bundle.dB, atol=1e-10)
    assert rec.stats["variance_ratio"] == pytest.approx(1.0, abs=0.05)
    assert abs(rec.stats["lag1_autocorr"]) < 0.05


def test_girsanov_weights() -> None:
    times = time_partition(1.0, n_steps=8)
    dB = brownian_increments(9, 4096, times)[..., 0]
    alpha = np.full_like(dB, 0.5)
    log_w = girsanov_log_weight(alpha, dB, times)
    assert_allclose(log_w, 0.5 * dB.sum(axis=1) - 0.125)
    assert np.mean(girsanov_weight(alpha, dB, times)) == pytest.approx(1.0, abs=0.05)
    with pytest.raises(GirsanovOverflowError) as info:
        girsanov_weight(np.full_like(dB, 100.0), np.full_like(dB, 100.0), times)
    assert info.value.path_index == 0


def test_reweighted_driftless_paths_match_the_drifted_law() -> None:
    times = time_partition(1.0, n_steps=8)
    n = 20000
    alpha = np.where(np.arange(8) < 4, 1.0, -0.5)[None, :].repeat(n, axis=0)
    dB_weak = brownian_increments(12, n, times)[..., 0]
    w = girsanov_weight(alpha, dB_weak, times)
    x_weak = dB_weak.sum(axis=1)
    dB_strong = brownian_increments(13, n, times)[..., 0]
    x_strong = (alpha * np.diff(times)).sum(axis=1) + dB_strong.sum(axis=1)
    for k in (1, 2):
        weighted = w * x_weak**k
        strong = x_strong**k
        se = (weighted.std() + strong.std()) / np.sqrt(n)
        assert abs(weighted.mean() - strong.mean()) < 5.0 * se
    assert np.mean(x_strong) == pytest.approx(0.25, abs=0.05)


def test_backward_recursion_prices_x_squared() -> None:
    c = get_problem("heat-x2")
    times = time_partition(1.0, n_steps=20)
    bundle = backward_recursion(euler_forward(c, None, 0.0, times, 4096, seed=8), c, degree=3)
    assert np.mean(bundle.Y[:, 0]) == pytest.approx(1.0, abs=0.1)
    mid = bundle.n_t // 2
    x = bundle.X[:, mid, 0]
    inner = np.abs(x) < 1.0
    assert_allclose(bundle.Z[inner, mid, 0], 2.0 * x[inner], atol=1.0)


def test_backward_recursion_with_field_uses_its_gradient() -> None:
    c = get_problem("heat-x")
    times = time_partition(1.0, n_steps=10)
    bundle = backward_recursion(euler_forward(c, None, 0.0, times, 128, seed=1), c, field=_linear_field())
    assert_allclose(bundle.Y, bundle.X[..., 0], atol=1e-10)


def test_backward_regression_rejects_coupled_forward() -> None:
    c = get_problem("drift-k")
    bundle = euler_forward(c, _linear_field(), 0.0, time_partition(1.0, n_steps=4), 128, seed=0)
    with pytest.raises(ConfigurationError):
        backward_recursion(bundle, c)


def test_time_change_with_unit_sigma_is_brownian() -> None:
    du = 1e-3
    paths = time_change_paths(
        lambda w: np.ones_like(w),
        T=0.5,
        n_t=5,
        n_paths=2048,
        seed=3,
        du=du,
        sigma_max=1.0,
        integrands={"one": lambda w: np.ones_like(w)},
    )
    assert paths.X.shape == (2048, 6)
    gap = paths.integrals["one"] - paths.times[None, :]
    assert np.all(gap >= -1e-12) and np.all(gap <= du + 1e-12)
    assert np.var(paths.X[:, -1]) == pytest.approx(0.5, rel=0.1)
    assert paths.clock_steps <= int(np.ceil(0.5 * 1.05 / du))


def test_time_change_budget_exhaustion() -> None:
    with pytest.raises(DomainError, match="clock budget"):
        time_change_paths(lambda w: np.ones_like(w), 1.0, 4, 64, seed=0, du=1e-2, u_max=0.5)


def test_bundle_roundtrip(tmp_path: Path) -> None:
    c = get_problem("tsirelson", depth=4)
    bundle = euler_forward(c, None, 0.0, time_partition(1.0, n_steps=8), 64, seed=6)
    bundle = bundle.with_(weights=np.linspace(0.5, 1.5, 64))
    path = bundle.save(tmp_path / "bundle.txt")
    back = PathBundle.load(path)
    assert_array_equal(back.X, bundle.X)
    assert_array_equal(back.dB, bundle.dB)
    assert_array_equal(back.drift_path, bundle.drift_path)
    assert_array_equal(back.weights, bundle.weights)
    assert back.seed == 6 and back.problem == "tsirelson"
    assert bundle.save(tmp_path / "again.txt").read_bytes() == path.read_bytes()
