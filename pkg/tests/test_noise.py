import numpy as np
import pytest

from nlslab.grid import ComplexField, make_grid
from nlslab.noise import (
    BrownianPath,
    NoiseError,
    build_profiles,
    coefficient_fields,
    finite_difference_derivative,
    gauge_transform,
    lower_order_coefficients,
    make_profiles,
    ProfileSpec,
    sample_brownian,
)


@pytest.fixture(scope="module")
def grid():
    return make_grid(1, 40, 512)


# ---------------------------------------------------------------------------
# profiles


def test_constant_profiles_zero_coefficients(grid):
    prof = make_profiles("constant", 0.7, (), grid, n_modes=3)
    path = sample_brownian(1, np.linspace(0, 1, 11), 3)
    coeffs = lower_order_coefficients(prof, path, 0.5)
    assert coeffs.is_zero
    assert all(np.abs(a).max() == 0.0 for a in coeffs.a1)
    assert np.abs(coeffs.a0).max() == 0.0
    assert coeffs.mu.max() == pytest.approx(0.5 * 0.7**2 * 3)


@pytest.mark.parametrize("order,h", [(0, 0.02), (1, 0.02), (2, 0.02), (3, 0.02), (4, 5e-5), (5, 5e-5)])
def test_flat_profile_derivatives_vanish(order, h, grid):
    prof = make_profiles("flat", 0.5, ((0.0,),), grid, n_modes=1)
    v = finite_difference_derivative(prof.phi_funcs[0], [0.0], order, axis=0, d=1, h=h)
    assert abs(v) < 1e-6


def test_flat_profile_2d_derivatives_vanish():
    g2 = make_grid(2, 40, 128)
    prof = make_profiles("flat", 0.5, ((0.0, 0.0), (5.0, 3.0)), g2, n_modes=1)
    for pt in ((0.0, 0.0), (5.0, 3.0)):
        for axis in (0, 1):
            for order, h in [(1, 0.02), (2, 0.02), (3, 0.02), (4, 5e-5), (5, 5e-5)]:
                v = finite_difference_derivative(prof.phi_funcs[0], pt, order, axis=axis, d=2, h=h)
                assert abs(v) < 1e-6


def test_profile_tail_flatness_at_edge(grid):
    prof = make_profiles("flat", 0.5, ((0.0,),), grid)
    bracket = 1.0 + grid.radius_squared()
    for g in prof.grad[0]:
        assert (bracket * np.abs(g))[[0, -1]].max() < 1e-8


def test_analytic_gradients_match_fd(grid):
    for kind, pts in [("schwartz", ()), ("flat", ((0.0,),))]:
        prof = make_profiles(kind, 0.4, pts, grid, n_modes=2)
        x = np.array([-7.3, -2.1, 0.9, 4.4])
        idx = np.searchsorted(grid.axis(), x)
        xg = grid.axis()[idx]
        for l in range(2):
            fd = np.array(
                [
                    finite_difference_derivative(prof.phi_funcs[l], [xi], 1, 0, 1, h=1e-4)
                    for xi in xg
                ]
            )
            assert np.abs(fd - prof.grad[l][0][idx]).max() < 1e-6


def test_flat_points_near_edge_rejected(grid):
    with pytest.raises(NoiseError):
        make_profiles("flat", 0.5, ((17.0,),), grid)


def test_profile_laplacian_consistency_2d():
    from nlslab.grid import laplacian_values

    g2 = make_grid(2, 40, 128)
    prof = make_profiles("schwartz", 0.4, (), g2)
    lap = laplacian_values(g2, prof.phi[0].astype(complex)).real
    assert np.abs(lap - prof.lap[0]).max() < 1e-6


# ---------------------------------------------------------------------------
# Brownian paths


def test_brownian_determinism():
    times = np.linspace(0, 1, 101)
    a = sample_brownian(42, times, 3)
    b = sample_brownian(42, times, 3)
    assert np.array_equal(a.values, b.values)
    c = sample_brownian(43, times, 3)
    assert not np.array_equal(a.values, c.values)


def test_brownian_starts_at_zero_prefix_sums():
    times = np.linspace(0, 2, 21)
    p = sample_brownian(9, times, 2)
    assert np.all(p.values[0] == 0.0)
    assert np.allclose(np.cumsum(p.increments, axis=0), p.values[1:], atol=1e-15)


def test_brownian_variance_ensemble():
    # 10^4 paths: sample variance of B(1) within 3 sigma of 1
    vals = np.array(
        [sample_brownian(s, np.array([0.0, 1.0]), 1).values[-1, 0] for s in range(10_000)]
    )
    assert abs(vals.var() - 1.0) < 3.0 * np.sqrt(2.0) / 100.0


def test_brownian_disjoint_increment_correlation():
    times = np.array([0.0, 0.5, 1.0])
    incs = np.array(
        [np.diff(sample_brownian(s, times, 1).values[:, 0]) for s in range(10_000)]
    )
    corr = np.corrcoef(incs[:, 0], incs[:, 1])[0, 1]
    assert abs(corr) < 0.05


def test_brownian_refinement_bitwise():
    times = np.linspace(0, 1, 51)
    p = sample_brownian(7, times, 2)
    fine = p.refine()
    assert np.array_equal(fine.values[0::2], p.values)
    assert np.array_equal(fine.times[0::2], p.times)
    # coarse increments equal sums of the two bridge increments
    sums = fine.increments[0::2] + fine.increments[1::2]
    assert np.abs(sums - p.increments).max() < 1e-14
    again = p.refine()
    assert np.array_equal(fine.values, again.values)


def test_brownian_rejects_bad_grid():
    with pytest.raises(NoiseError):
        sample_brownian(1, np.array([0.0, 0.0, 1.0]), 1)
    with pytest.raises(NoiseError):
        sample_brownian(1, np.array([0.0]), 1)


def test_path_lookup(grid):
    p = sample_brownian(1, np.linspace(0, 1, 11), 1)
    assert p.value_at(0.3).shape == (1,)
    with pytest.raises(NoiseError):
        p.value_at(0.31)


# ---------------------------------------------------------------------------
# gauge and coefficients


def test_gauge_preserves_modulus(grid):
    prof = make_profiles("schwartz", 0.6, (), grid, n_modes=2)
    path = sample_brownian(5, np.linspace(0, 1, 11), 2)
    rng = np.random.default_rng(0)
    X = ComplexField(grid, rng.standard_normal(512) + 1j * rng.standard_normal(512))
    v = gauge_transform(X, prof, path, 0.5, "forward")
    mod_err = np.abs(np.abs(v.values) - np.abs(X.values))
    assert mod_err.max() < 1e-15 * np.abs(X.values).max()
    back = gauge_transform(v, prof, path, 0.5, "inverse")
    assert np.abs(back.values - X.values).max() < 1e-13


def test_coefficient_structure(grid):
    prof = make_profiles("schwartz", 0.5, (), grid, n_modes=2)
    path = sample_brownian(3, np.linspace(0, 1, 11), 2)
    coeffs = lower_order_coefficients(prof, path, 0.4)
    w = path.value_at(0.4)
    grad_psi = prof.grad_psi(w)
    # a1 = 2i grad(psi): purely imaginary with the right magnitude
    assert np.abs(coeffs.a1[0].real).max() == 0.0
    assert np.abs(coeffs.a1[0].imag - 2.0 * grad_psi[0]).max() < 1e-14
    # Re a0 = -|grad psi|^2 <= 0
    assert np.all(coeffs.a0.real <= 0.0)
    assert np.abs(coeffs.a0.real + grad_psi[0] ** 2).max() < 1e-14


def test_coefficients_vanish_at_flat_points(grid):
    prof = make_profiles("flat", 0.5, ((0.0,),), grid, n_modes=1)
    path = sample_brownian(11, np.linspace(0, 1, 11), 1)
    coeffs = lower_order_coefficients(prof, path, 0.5)
    i0 = np.argmin(np.abs(grid.axis()))
    assert abs(coeffs.a1[0][i0]) < 1e-12
    assert abs(coeffs.a0[i0]) < 1e-12


def test_profile_spec_rejects_bad_modes(grid):
    with pytest.raises(NoiseError):
        build_profiles(ProfileSpec(kind="schwartz", amplitude=0.1, n_modes=9), grid)
    with pytest.raises(NoiseError):
        build_profiles(ProfileSpec(kind="schwartz", amplitude=-0.1), grid)
    with pytest.raises(NoiseError):
        build_profiles(ProfileSpec(kind="bogus", amplitude=0.1), grid)
