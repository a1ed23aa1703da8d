import numpy as np
import pytest

from nlslab.evolution import (
    EvolveConfig,
    EvolveError,
    NoiseSetup,
    backward_solve,
    integrate,
    step_gnls,
    step_strang,
)
from nlslab.exact import Bubble, BlowupParams, Soliton, SolitonParams, pseudo_conformal_blowup, solitary_wave
from nlslab.grid import ComplexField, l2_norm_sq, make_grid, norm_suite
from nlslab.ground_state import ground_profile
from nlslab.noise import ProfileSpec, build_profiles, coefficient_fields, sample_brownian


@pytest.fixture(scope="module")
def profile():
    return ground_profile(1)


def test_step_plane_wave_exact():
    g = make_grid(1, 2 * np.pi, 64)
    x = g.axis()
    A, k, dt = 0.7, 3.0, 0.01
    f = ComplexField(g, A * np.exp(1j * k * x))
    out = step_strang(f, dt, 5.0)
    exact = A * np.exp(1j * (k * x + (A**4 - k * k) * dt))
    assert np.abs(out.values - exact).max() < 1e-13


def test_step_mass_exact(profile):
    g = make_grid(1, 40, 1024)
    f = profile.sample(g)
    out = step_strang(f, 1e-3, 5.0)
    assert abs(l2_norm_sq(out) - l2_norm_sq(f)) / l2_norm_sq(f) < 1e-14


def test_step_local_order_three(profile):
    g = make_grid(1, 80, 2048)
    sp = SolitonParams(solitons=(Soliton(velocity=(1.0,), width=1.0),))
    W0 = solitary_wave(sp, 0.0, g, profile)
    dt = 2e-3
    errs = []
    for h in (dt, dt / 2):
        exact = solitary_wave(sp, h, g, profile)
        stepped = step_strang(W0, h, 5.0)
        errs.append(np.sqrt(l2_norm_sq(ComplexField(g, stepped.values - exact.values))))
    ratio = errs[0] / errs[1]
    assert 6.0 < ratio < 10.0


def test_gnls_zero_coefficients_bitwise(profile):
    g = make_grid(1, 40, 512)
    prof = build_profiles(ProfileSpec(kind="constant", amplitude=0.8, n_modes=2), g)
    path = sample_brownian(1, np.linspace(0, 1, 11), 2)
    coeffs = coefficient_fields(prof, path.value_at(0.5))
    f = profile.sample(g)
    a = step_gnls(f, 1e-3, 5.0, coeffs)
    b = step_strang(f, 1e-3, 5.0)
    assert np.array_equal(a.values, b.values)


def test_soliton_run_error(profile):
    g = make_grid(1, 80, 2048)
    sp = SolitonParams(solitons=(Soliton(velocity=(1.0,), width=1.0),))
    W0 = solitary_wave(sp, 0.0, g, profile)
    cfg = EvolveConfig(grid=g, p=5.0, v0=W0, t0=0.0, t1=1.0, dt0=1e-3, cadence=10**9)
    traj = integrate(cfg)
    exact = solitary_wave(sp, traj.final_time, g, profile)
    err = np.sqrt(l2_norm_sq(ComplexField(g, traj.final_state.values - exact.values)))
    # second-order splitting at dt=1e-3 over one time unit
    assert err < 3e-4
    assert traj.residual.max() < 1e-12
    assert traj.stop_reason == "reached_end"


def test_blowup_run_stops_and_estimates_T(profile):
    from nlslab.diagnostics import extrapolate_blowup_time

    g = make_grid(1, 40, 2048)
    bp = BlowupParams(blowup_time=1.0, bubbles=(Bubble(position=(0.0,), width=1.0),))
    S0 = pseudo_conformal_blowup(bp, 0.0, g, profile)
    cfg = EvolveConfig(
        grid=g, p=5.0, v0=S0, t0=0.0, t1=1.0, dt0=1e-3,
        g_max=1e5, grad_ref=np.sqrt(profile.grad_sq), width_factor=4.0, cadence=500,
    )
    traj = integrate(cfg)
    assert traj.stop_reason in ("width_resolution", "gradient_threshold")
    assert traj.final_time < 1.0
    t_est = extrapolate_blowup_time(traj.times, traj.grad_norm)
    assert abs(t_est - 1.0) < 0.02


def test_determinism_same_config(profile):
    g = make_grid(1, 40, 512)
    sp = SolitonParams(solitons=(Soliton(velocity=(1.0,), width=1.0),))
    W0 = solitary_wave(sp, 0.0, g, profile)
    noise = NoiseSetup(profiles=ProfileSpec(kind="schwartz", amplitude=0.3, n_modes=2), seed=5)
    cfg = EvolveConfig(grid=g, p=5.0, v0=W0, t0=0.0, t1=0.25, dt0=1e-3, noise=noise, cadence=50)
    a = integrate(cfg)
    b = integrate(cfg)
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.final_state.values, b.final_state.values)
    assert np.array_equal(a.noise_values, b.noise_values)


def test_gnls_smooth_drive_order_two(profile):
    g = make_grid(1, 40, 512)
    sp = SolitonParams(solitons=(Soliton(velocity=(0.5,), width=1.0),))
    W0 = solitary_wave(sp, 0.0, g, profile)
    prof = ProfileSpec(kind="schwartz", amplitude=0.3, n_modes=2)
    finals = {}
    for dt0 in (4e-3, 2e-3, 1e-3, 5e-4):
        cfg = EvolveConfig(
            grid=g, p=5.0, v0=W0, t0=0.0, t1=1.0, dt0=dt0,
            noise=NoiseSetup(profiles=prof, drive="sin", path_dt=4e-3),
            cadence=10**9, adaptive=False, keep_snapshots=False,
        )
        finals[dt0] = integrate(cfg).final_state.values
    e = [
        np.sqrt(l2_norm_sq(ComplexField(g, finals[h] - finals[5e-4])))
        for h in (4e-3, 2e-3, 1e-3)
    ]
    assert np.log2(e[0] / e[1]) > 1.9
    assert np.log2(e[1] / e[2]) > 1.9


def test_gnls_mass_drift_within_budget(profile):
    g = make_grid(1, 40, 512)
    sp = SolitonParams(solitons=(Soliton(velocity=(1.0,), width=1.0),))
    W0 = solitary_wave(sp, 0.0, g, profile)
    noise = NoiseSetup(profiles=ProfileSpec(kind="flat", amplitude=0.4, n_modes=2, flat_points=((0.0,),)), seed=2)
    cfg = EvolveConfig(grid=g, p=5.0, v0=W0, t0=0.0, t1=1.0, dt0=1e-3, noise=noise, cadence=10**9, keep_snapshots=False)
    traj = integrate(cfg)
    assert traj.residual.max() < 1e-10


def test_config_validation(profile):
    g = make_grid(1, 40, 512)
    f = profile.sample(g)
    with pytest.raises(EvolveError):
        EvolveConfig(grid=g, p=5.0, v0=f, t0=0.0, t1=1.0, dt0=-1e-3)
    with pytest.raises(EvolveError):
        EvolveConfig(grid=g, p=5.0, v0=f, t0=1.0, t1=0.5, dt0=1e-3)
    cfg = EvolveConfig(grid=g, p=5.0, v0=f, t0=0.0, t1=1.0, dt0=1e-3, g_max=0.1)
    with pytest.raises(EvolveError):
        integrate(cfg)


def test_noise_span_must_match_path_grid(profile):
    g = make_grid(1, 40, 512)
    f = profile.sample(g)
    noise = NoiseSetup(profiles=ProfileSpec(kind="constant", amplitude=0.1), seed=1)
    cfg = EvolveConfig(grid=g, p=5.0, v0=f, t0=0.0, t1=0.10037, dt0=1e-3, noise=noise)
    with pytest.raises(EvolveError):
        integrate(cfg)


def test_backward_solve_roundtrip(profile):
    from nlslab.evolution import _step_strang_values

    g = make_grid(1, 40, 512)
    x = g.axis()
    zstar_vals = 0.05 * np.exp(-((x - 5.0) ** 2)).astype(np.complex128)
    zstar = ComplexField(g, zstar_vals)
    z0 = backward_solve(zstar, 1.0, 0.0, 5.0, dt0=1e-3)
    vals = z0.values.copy()
    for _ in range(1000):
        vals = _step_strang_values(g, vals, 1e-3, 5.0)
    err = np.sqrt(l2_norm_sq(ComplexField(g, vals - zstar.values)))
    assert err < 1e-8


def test_backward_solve_zero_and_smallness(profile):
    g = make_grid(1, 40, 512)
    zero = ComplexField(g, np.zeros(512))
    out = backward_solve(zero, 1.0, 0.0, 5.0)
    assert not np.any(out.values)
    big = ComplexField(g, profile.sample(g).values)
    with pytest.raises(EvolveError):
        backward_solve(big, 1.0, 0.0, 5.0)


def test_backward_solve_small_data_bound(profile):
    g = make_grid(1, 40, 512)
    x = g.axis()
    q_h1 = norm_suite(profile.sample(g)).h1
    vals = np.exp(-((x - 3.0) ** 2)).astype(np.complex128)
    vals *= 0.05 * q_h1 / norm_suite(ComplexField(g, vals)).h1
    zstar = ComplexField(g, vals)
    z0 = backward_solve(zstar, 1.0, 0.0, 5.0, dt0=1e-3)
    assert norm_suite(z0).h1 <= 2.0 * norm_suite(zstar).h1


def test_2d_soliton_short_run():
    prof2 = ground_profile(2)
    g = make_grid(2, 20, 128)
    sp = SolitonParams(solitons=(Soliton(velocity=(0.5, 0.0), width=1.0, position0=(0.0, 0.0)),))
    W0 = solitary_wave(sp, 0.0, g, prof2)
    cfg = EvolveConfig(grid=g, p=3.0, v0=W0, t0=0.0, t1=0.1, dt0=1e-3, cadence=10**9)
    traj = integrate(cfg)
    exact = solitary_wave(sp, traj.final_time, g, prof2)
    err = np.sqrt(l2_norm_sq(ComplexField(g, traj.final_state.values - exact.values)))
    assert err < 1e-3
    assert traj.residual.max() < 1e-12
