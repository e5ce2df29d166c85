import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tcvolterra import rng
from tcvolterra.errors import InvalidArgument
from tcvolterra.noise import (CIRIntensity, DeterministicIntensity, MarkSet,
                              PiecewiseLognormalIntensity, TimeChangeModel, TimeChangePath,
                              build_grid, lambda_weights, sample_noise, sample_time_change,
                              simulate_ensemble)

from conftest import within_se


def test_grid_four_cells():
    assert np.allclose(build_grid(1.0, 4).nodes, [0, 0.25, 0.5, 0.75, 1.0])


def test_grid_single_cell():
    g = build_grid(2.0, 1)
    assert np.array_equal(g.nodes, [0.0, 2.0])
    assert g.T == 2.0 and g.N == 1


@pytest.mark.parametrize("T,N", [(1.0, 0), (0.0, 4), (-1.0, 2), (1.0, 2.5)])
def test_grid_rejects_bad_arguments(T, N):
    with pytest.raises(InvalidArgument):
        build_grid(T, N)


@given(T=st.floats(0.01, 100.0), N=st.integers(1, 300))
def test_grid_invariants(T, N):
    g = build_grid(T, N)
    assert g.nodes[0] == 0.0 and g.nodes[-1] == T
    assert np.all(g.dt > 0)
    assert np.allclose(g.dt, T / N)


def test_marks_reject_zero_mark():
    with pytest.raises(InvalidArgument):
        MarkSet([0.0, 1.0], [1.0, 1.0])


def test_deterministic_time_change():
    grid = build_grid(1.0, 5)
    model = TimeChangeModel(DeterministicIntensity(1.0), DeterministicIntensity(0.0))
    tc = sample_time_change(model, grid, seed=11, n_paths=7)
    assert np.all(tc.lam_B == 1.0) and np.all(tc.lam_H == 0.0)


def test_deterministic_function_uses_left_endpoints():
    grid = build_grid(1.0, 4)
    model = TimeChangeModel(DeterministicIntensity(lambda t: 1.0 + t), DeterministicIntensity(0.0))
    tc = sample_time_change(model, grid, seed=0, n_paths=2)
    assert np.allclose(tc.lam_B[0], 1.0 + grid.left)


def test_negative_intensity_rejected():
    with pytest.raises(InvalidArgument):
        CIRIntensity(kappa=1.0, theta=-1.0)
    with pytest.raises(InvalidArgument):
        DeterministicIntensity(-0.5)


def test_cir_stationary_mean(random_model):
    # stationary start: every cell has mean theta (analytic)
    grid = build_grid(1.0, 8)
    tc = sample_time_change(random_model, grid, seed=5, n_paths=10_000)
    lam = tc.lam_B
    se = lam.std(axis=0, ddof=1) / np.sqrt(lam.shape[0])
    for j in range(grid.N):
        assert within_se(lam[:, j].mean(), 1.0, se[j])


def test_same_seed_same_paths(random_model):
    grid = build_grid(1.0, 6)
    a = sample_time_change(random_model, grid, seed=9, n_paths=700)
    b = sample_time_change(random_model, grid, seed=9, n_paths=700)
    assert np.array_equal(a.lam_B, b.lam_B) and np.array_equal(a.lam_H, b.lam_H)


def test_lambda_weight_arithmetic():
    grid = build_grid(0.5, 1)
    marks = MarkSet([1.0], [0.2])
    w = lambda_weights(TimeChangePath(np.array([[2.0]]), np.array([[0.0]])), grid, marks)
    assert w[0, 0, 0] == 1.0 and w[0, 0, 1] == 0.0
    grid = build_grid(0.1, 1)
    w = lambda_weights(TimeChangePath(np.array([[0.0]]), np.array([[3.0]])), grid, marks)
    assert w[0, 0, 1] == pytest.approx(0.06, abs=1e-15)


def test_lambda_weight_dimension_mismatch(marks):
    with pytest.raises(InvalidArgument):
        lambda_weights(TimeChangePath(np.ones((1, 3)), np.ones((1, 3))), build_grid(1, 4), marks)


def test_brownian_increment_variance():
    grid = build_grid(1.0, 4)
    model = TimeChangeModel(DeterministicIntensity(1.0), DeterministicIntensity(0.0))
    ens = simulate_ensemble(model, grid, MarkSet(), 100_000, seed=2)
    dB = ens.noise.dB
    for j in range(grid.N):
        v = dB[:, j].var()
        # Var of the sample variance of a normal: 2 sigma^4 / n
        se = np.sqrt(2.0 / dB.shape[0]) * 0.25
        assert within_se(v, 0.25, se)


def test_compensated_jumps_mean_zero_and_variance(random_model, marks):
    grid = build_grid(1.0, 4)
    ens = simulate_ensemble(random_model, grid, marks, 100_000, seed=4)
    dH = ens.noise.dH
    # law of total variance: Var(dH) = E[lam_H] nu dt since E[dH | lam] = 0
    for j in range(grid.N):
        for k in range(marks.M):
            x = dH[:, j, k]
            se = x.std(ddof=1) / np.sqrt(x.size)
            assert within_se(x.mean(), 0.0, se)
            ref = 0.8 * marks.nu[k] * grid.dt[j]
            se_var = np.sqrt(np.var((x - x.mean()) ** 2) / x.size)
            assert within_se(x.var(), ref, se_var)


def test_conditional_brownian_variance(random_model, marks):
    # dB / sqrt(lam_B dt) is standard normal given the clock
    grid = build_grid(1.0, 4)
    ens = simulate_ensemble(random_model, grid, marks, 50_000, seed=6)
    zeta = ens.noise.dB / np.sqrt(ens.lam_B * grid.dt)
    se = np.sqrt(2.0 / zeta.shape[0])
    for j in range(grid.N):
        assert within_se(zeta[:, j].var(), 1.0, se)


def test_piecewise_lognormal_is_nonnegative_and_piecewise_constant():
    grid = build_grid(1.0, 8)
    model = TimeChangeModel(PiecewiseLognormalIntensity(pieces=4), DeterministicIntensity(0.0))
    tc = sample_time_change(model, grid, seed=1, n_paths=50)
    assert np.all(tc.lam_B >= 0)
    assert np.array_equal(tc.lam_B[:, 0], tc.lam_B[:, 1])


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**32), n=st.integers(1, 1500))
def test_determinism_across_workers(seed, n):
    grid = build_grid(1.0, 3)
    marks = MarkSet([0.5], [1.0])
    model = TimeChangeModel(CIRIntensity(), CIRIntensity(lam0=0.5))
    a = simulate_ensemble(model, grid, marks, n, seed, workers=1)
    b = simulate_ensemble(model, grid, marks, n, seed, workers=3)
    assert np.array_equal(a.dmu, b.dmu) and np.array_equal(a.lam_H, b.lam_H)
    assert np.all(a.w >= 0)


def test_path_prefix_stable_under_ensemble_size():
    grid = build_grid(1.0, 3)
    model = TimeChangeModel(CIRIntensity(), CIRIntensity())
    marks = MarkSet([0.5], [1.0])
    small = simulate_ensemble(model, grid, marks, 100, 8)
    large = simulate_ensemble(model, grid, marks, 1300, 8)
    assert np.array_equal(small.dmu, large.dmu[:100])


def test_streams_distinct_per_tag():
    a = rng.stream(1, "gauss", 0).standard_normal(4)
    b = rng.stream(1, "poisson", 0).standard_normal(4)
    c = rng.stream(1, "gauss", 1).standard_normal(4)
    assert not np.array_equal(a, b) and not np.array_equal(a, c)


def test_noise_conditionally_independent_of_future_cells(marks):
    # resampling with a different grid length keeps early cells' law but not their values;
    # within one ensemble, increments of different cells are uncorrelated
    grid = build_grid(1.0, 4)
    model = TimeChangeModel(DeterministicIntensity(1.0), DeterministicIntensity(1.0))
    ens = simulate_ensemble(model, grid, marks, 40_000, 12)
    c = np.corrcoef(ens.noise.dB[:, 0], ens.noise.dB[:, 1])[0, 1]
    assert abs(c) < 3 / np.sqrt(40_000)
