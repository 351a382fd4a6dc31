import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deeponet_bounds.fourier import (
    basis_matrix,
    enumerate_wavenumbers,
    fourier_basis,
    trig_interpolate,
    upsample,
    wavenumbers_in_box,
)
from deeponet_bounds.measures import (
    MeasureSpec,
    PeriodicGrid,
    empirical_spectrum,
    gaussian_kernel_eigenvalue,
    gaussian_kernel_eigenvalues,
    gaussian_kernel_spectrum,
    sample,
    sample_batch,
    sample_rng,
)
from deeponet_bounds.stats import jackknife_of_mean, rms_with_stderr


# -- Fourier basis -------------------------------------------------------------


def test_constant_mode_value():
    assert fourier_basis(0, 1.234) == pytest.approx(1 / math.sqrt(2 * math.pi), abs=1e-15)


def test_first_cosine_at_origin():
    assert fourier_basis(1, 0.0) == pytest.approx(1 / math.sqrt(math.pi), abs=1e-15)


def test_negative_wavenumber_is_sine():
    x = np.linspace(0, 6, 7)
    np.testing.assert_allclose(fourier_basis(-2, x), np.sin(-2 * x) / math.sqrt(math.pi), atol=1e-15)


@pytest.mark.parametrize("dim", [1, 2])
def test_basis_orthonormal_on_grid(dim):
    # includes k = (0, 1) and (0, -1), which must map to cos and sin respectively
    K = 3
    ks = wavenumbers_in_box(K, dim)
    grid = PeriodicGrid(2 * K + 1, dim)
    B = basis_matrix(ks, grid.points())
    G = grid.weight * B @ B.T
    np.testing.assert_allclose(G, np.eye(len(ks)), atol=1e-12)


def test_enumeration_small_cases():
    assert enumerate_wavenumbers(1, 1).tolist() == [[0]]
    assert enumerate_wavenumbers(3, 1).tolist() == [[0], [-1], [1]]
    nine = enumerate_wavenumbers(9, 2)
    assert {tuple(k) for k in nine} == {(a, b) for a in (-1, 0, 1) for b in (-1, 0, 1)}


@given(st.integers(1, 60), st.integers(1, 2))
@settings(max_examples=30, deadline=None)
def test_enumeration_shells_monotone(count, dim):
    ks = enumerate_wavenumbers(count, dim)
    radius = np.max(np.abs(ks), axis=1)
    assert np.all(np.diff(radius) >= 0)
    assert len({tuple(k) for k in ks}) == count


def test_trig_interpolation_exact_for_band_limited():
    grid = PeriodicGrid(9)
    f = lambda x: 0.3 + np.cos(2 * x) - 0.7 * np.sin(4 * x)
    pts = np.random.default_rng(0).uniform(0, 2 * np.pi, 13)
    np.testing.assert_allclose(trig_interpolate(f(grid.axis), pts), f(pts), atol=1e-13)


def test_trig_interpolation_2d():
    grid = PeriodicGrid(7, 2)
    f = lambda p: np.cos(p[:, 0] + 2 * p[:, 1]) + np.sin(3 * p[:, 1])
    vals = f(grid.points()).reshape(grid.shape)
    pts = np.random.default_rng(1).uniform(0, 2 * np.pi, (10, 2))
    np.testing.assert_allclose(trig_interpolate(vals, pts), f(pts), atol=1e-12)


def test_upsample_matches_function():
    f = lambda x: np.sin(x) + 0.5 * np.cos(3 * x)
    coarse = PeriodicGrid(9).axis
    fine = PeriodicGrid(36).axis
    np.testing.assert_allclose(upsample(f(coarse), 36), f(fine), atol=1e-13)


# -- eigenvalues --------------------------------------------------------------


def test_gaussian_eigenvalue_at_zero():
    assert gaussian_kernel_eigenvalues(0.1, 3)[0] == pytest.approx(math.sqrt(2 * math.pi) * 0.1, abs=1e-7)
    assert gaussian_kernel_eigenvalue(0.1, 0) == pytest.approx(0.2506628, abs=1e-7)


def test_gaussian_eigenvalues_even_and_ratio():
    lam = gaussian_kernel_eigenvalues(1.0, 4)
    for k in range(1, 5):
        assert lam[k] == lam[-k]
    assert lam[2] / lam[1] == pytest.approx(math.exp(-1.5), rel=1e-14)


# -- sampling -----------------------------------------------------------------


def test_param_fourier_zero_alpha_is_mean():
    spec = MeasureSpec("ParamFourier", K=2, alpha=[0.0] * 5, mean=1.5)
    u = sample(spec, PeriodicGrid(16), np.random.default_rng(0))
    np.testing.assert_allclose(u.values, 1.5, atol=0)


def test_shifted_sine_bounded_zero_mean():
    spec = MeasureSpec("ShiftedSine")
    grid = PeriodicGrid(64)
    values, shifts = sample_batch(spec, grid, 50, 3)
    assert np.max(np.abs(values)) <= 1.0
    np.testing.assert_allclose(grid.weight * values.sum(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(values, -np.sin(grid.axis[None] - shifts), atol=1e-14)


def test_gaussian_second_moment_matches_trace():
    spec = MeasureSpec("GaussianKernel", ell=0.5)
    grid = PeriodicGrid(4 * (2 * spec.truncation + 1))
    values, _ = sample_batch(spec, grid, 2000, 11)
    sq = grid.norm(values) ** 2
    est, se = jackknife_of_mean(sq)
    trace = sum(gaussian_kernel_eigenvalues(0.5, spec.truncation).values())
    assert abs(est - trace) <= 4 * se


def test_dimension_mismatch_rejected():
    with pytest.raises(ValueError):
        sample(MeasureSpec("GaussianKernel", dim=2), PeriodicGrid(8, 1), np.random.default_rng(0))


def test_sample_streams_are_reproducible_and_prefix_stable():
    spec = MeasureSpec("GaussianKernel", ell=0.5)
    grid = PeriodicGrid(32)
    a, _ = sample_batch(spec, grid, 10, 7)
    b, _ = sample_batch(spec, grid, 4, 7, start=6)
    np.testing.assert_allclose(a[6:], b, rtol=0, atol=1e-13)
    c = sample(spec, grid, sample_rng(7, 3))
    np.testing.assert_allclose(a[3], c.values, rtol=0, atol=1e-13)
    again, _ = sample_batch(spec, grid, 10, 7)
    np.testing.assert_array_equal(a, again)


def test_field_sample_analytic_evaluation():
    spec = MeasureSpec("GaussianKernel", ell=0.5)
    u = sample(spec, PeriodicGrid(16), np.random.default_rng(2))
    pts = np.array([[0.1], [2.0], [5.5]])
    fine = sample(spec, PeriodicGrid(512), np.random.default_rng(2))
    assert u.analytic
    np.testing.assert_allclose(u.evaluate(pts), fine.evaluate(pts), atol=1e-12)


def test_measure_spec_json_roundtrip():
    spec = MeasureSpec("ParamFourier", ell=0.7, K=4, alpha_decay={"C": 0.5}, dim=2)
    again = MeasureSpec.from_json(spec.to_json())
    assert again == spec
    assert set(spec.to_dict()) >= {"family", "ell", "K", "alphaDecay", "dim"}


def test_measure_spec_rejects_bad_values():
    with pytest.raises(ValueError):
        MeasureSpec("GaussianKernel", ell=0.0)
    with pytest.raises(ValueError):
        MeasureSpec("ParamFourier", K=1, alpha=[1.0, -1.0, 0.0])
    with pytest.raises(ValueError):
        MeasureSpec.from_dict({"family": "GaussianKernel", "bogus": 1})


# -- empirical spectrum -------------------------------------------------------


def test_spectrum_of_symmetric_pair():
    grid = PeriodicGrid(32)
    phi = np.cos(2 * grid.axis) / math.sqrt(math.pi)
    spec = empirical_spectrum(np.stack([phi, -phi]), p=2, grid=grid)
    assert spec.eigenvalues[0] == pytest.approx(1.0, abs=1e-12)
    assert spec.eigenvalues[1] == pytest.approx(0.0, abs=1e-12)
    np.testing.assert_allclose(np.abs(spec.eigenvectors[0]), np.abs(phi), atol=1e-12)


def test_shifted_sine_spectrum():
    grid = PeriodicGrid(64)
    values, _ = sample_batch(MeasureSpec("ShiftedSine"), grid, 2000, 0)
    spec = empirical_spectrum(values, p=4, grid=grid)
    np.testing.assert_allclose(spec.eigenvalues[:2], math.pi / 2, rtol=0.1)
    assert np.all(spec.eigenvalues[2:] < 1e-10)
    span = np.stack([np.sin(grid.axis), np.cos(grid.axis)]) / math.sqrt(math.pi)
    for v in spec.eigenvectors[:2]:
        coeff = grid.weight * span @ v
        assert np.sum(coeff**2) == pytest.approx(1.0, abs=1e-10)


def test_spectrum_orthonormal_sorted_and_trace_bounded():
    spec = MeasureSpec("GaussianKernel", ell=0.5)
    grid = PeriodicGrid(64)
    values, _ = sample_batch(spec, grid, 300, 5)
    est = empirical_spectrum(values, p=10, grid=grid)
    G = grid.weight * est.eigenvectors @ est.eigenvectors.T
    np.testing.assert_allclose(G, np.eye(10), atol=1e-8)
    assert np.all(np.diff(est.eigenvalues) <= 0) and est.eigenvalues[-1] >= 0
    centered = values - values.mean(axis=0)
    assert est.eigenvalues.sum() <= np.mean(grid.norm(centered) ** 2) + 1e-12


def test_gaussian_empirical_spectrum_converges():
    spec = MeasureSpec("GaussianKernel", ell=0.5)
    grid = PeriodicGrid(64)
    values, _ = sample_batch(spec, grid, 5000, 9)
    est = empirical_spectrum(values, p=5, grid=grid)
    exact = gaussian_kernel_spectrum(0.5, 5, grid).eigenvalues
    np.testing.assert_allclose(est.eigenvalues, exact, rtol=0.15)


def test_mean_zero_family_sample_mean():
    spec = MeasureSpec("GaussianKernel", ell=0.5)
    grid = PeriodicGrid(32)
    values, _ = sample_batch(spec, grid, 1000, 13)
    est, se = jackknife_of_mean(values)
    assert np.all(np.abs(est) <= 5 * se)


def test_spectrum_needs_two_samples():
    with pytest.raises(ValueError):
        empirical_spectrum(np.ones((1, 8)), grid=PeriodicGrid(8))


def test_spectrum_from_field_samples():
    grid = PeriodicGrid(16)
    rng = np.random.default_rng(0)
    samples = [sample(MeasureSpec("ShiftedSine"), grid, rng) for _ in range(20)]
    est = empirical_spectrum(samples, p=2)
    assert est.sample_count == 20 and est.eigenvectors.shape == (2, 16)


# -- jackknife ----------------------------------------------------------------


def test_jackknife_of_mean_matches_classical_stderr():
    x = np.random.default_rng(0).normal(size=200)
    est, se = jackknife_of_mean(x)
    assert est == pytest.approx(x.mean())
    assert se == pytest.approx(x.std(ddof=1) / math.sqrt(200), rel=1e-10)


def test_rms_of_constant_errors():
    est, se = rms_with_stderr(np.full(10, 3.0))
    assert est == pytest.approx(3.0) and se == pytest.approx(0.0, abs=1e-14)
