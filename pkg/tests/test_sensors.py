import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from magnav.errors import DegenerateArray, EmptyInterval
from magnav.magnetostatics import MagWorld, eval_field, vdash, world_from_config
from magnav.sensors import (
    GyroModel,
    MagArrayModel,
    WheelModel,
    cross_offsets,
    dead_reckon,
    gradient_map,
    planar_pose_3d,
    preintegrate_all,
    preintegrate_gyro,
    recover_gradient,
    simulate_array,
    simulate_gyro,
    simulate_wheel,
)
from magnav.trajectory import Segment, Trajectory, lawnmower_revisit

from .conftest import random_sym_traceless


def _body_gradient(world, C, r):
    _, G = eval_field(world, r)
    return vdash(np.einsum("nji,njk,nkl->nil", C, G, C))


# --- gyro ----------------------------------------------------------------------


def test_gyro_constant_rate_noise_free():
    traj = Trajectory([Segment(0.5, 0.1, 10.0)])
    t, u = simulate_gyro(traj, GyroModel(Q=0.0, rate=50.0))
    assert t.size == 500 and t[0] == pytest.approx(0.02)
    np.testing.assert_allclose(u, 0.1, rtol=1e-12)


def test_gyro_zero_rate_mean_vanishes():
    traj = Trajectory([Segment(0.0, 0.0, 400.0)])
    model = GyroModel(Q=0.05**2, rate=50.0)
    _, u = simulate_gyro(traj, model, seed=1)
    sigma = np.sqrt(model.Q * model.rate)
    assert abs(np.mean(u)) < 4.0 * sigma / np.sqrt(u.size)
    assert np.std(u) == pytest.approx(sigma, rel=0.05)


def test_gyro_seed_determinism():
    traj = Trajectory([Segment(0.5, 0.2, 5.0)])
    a = simulate_gyro(traj, GyroModel(), seed=7)
    b = simulate_gyro(traj, GyroModel(), seed=7)
    c = simulate_gyro(traj, GyroModel(), seed=8)
    assert np.array_equal(a[1], b[1]) and not np.array_equal(a[1], c[1])


def test_gyro_samples_average_rate_over_interval():
    # a spin that starts mid-sample: the straddling sample reports the mean rate
    traj = Trajectory([Segment(0.0, 0.0, 0.01), Segment(0.0, 1.0, 1.0)])
    t, u = simulate_gyro(traj, GyroModel(Q=0.0, rate=50.0), t_end=0.1)
    assert u[0] == pytest.approx(0.5)
    np.testing.assert_allclose(u[1:], 1.0)


def test_gyro_model_rejects_negative_Q():
    with pytest.raises(ValueError):
        GyroModel(Q=-1.0)


# --- array ---------------------------------------------------------------------


def test_uniform_field_readings_identical():
    C, r = planar_pose_3d([1.0], [2.0], [0.7])
    R = simulate_array(MagWorld(), C, r, MagArrayModel(noise_std=0.0))
    assert R.shape == (1, 4, 3)
    np.testing.assert_allclose(R[0] - R[0, 0], 0.0, atol=1e-13)
    B, g = recover_gradient(R[0], baseline=0.4)
    np.testing.assert_allclose(g, 0.0, atol=1e-12)
    np.testing.assert_allclose(B, C[0].T @ [20.0, 0.0, 45.0], atol=1e-13)


def test_linear_field_gradient_recovered_exactly(rng):
    G0 = random_sym_traceless(rng, 5.0)
    w = MagWorld(background_gradient=G0)
    x, y, th = rng.uniform(-3, 3, 20), rng.uniform(-3, 3, 20), rng.uniform(-np.pi, np.pi, 20)
    C, r = planar_pose_3d(x, y, th)
    model = MagArrayModel(baseline=0.3, noise_std=0.0)
    _, g = recover_gradient(simulate_array(w, C, r, model), baseline=0.3)
    np.testing.assert_allclose(g, _body_gradient(w, C, r), atol=1e-12)


def test_array_noise_is_seeded():
    C, r = planar_pose_3d([0.0], [0.0], [0.0])
    m = MagArrayModel(noise_std=0.1)
    a = simulate_array(MagWorld(), C, r, m, rng=3)
    b = simulate_array(MagWorld(), C, r, m, rng=3)
    assert np.array_equal(a, b)


def test_single_pose_shape():
    C, r = planar_pose_3d([0.0], [0.0], [0.0])
    R = simulate_array(MagWorld(), C[0], r[0], MagArrayModel(noise_std=0.0))
    assert R.shape == (4, 3)


def test_calibration_errors_are_injectable():
    C, r = planar_pose_3d([0.0], [0.0], [0.0])
    bias = np.zeros((4, 3))
    bias[0, 0] = 0.4
    R = simulate_array(MagWorld(), C, r, MagArrayModel(noise_std=0.0, bias=bias))
    _, g = recover_gradient(R[0], baseline=0.4)
    assert g[0] == pytest.approx(1.0)  # 0.4 uT over 0.4 m


# --- gradient recovery -----------------------------------------------------------


def test_identical_readings():
    R = np.tile([1.0, -2.0, 3.0], (4, 1))
    B, g = recover_gradient(R, baseline=0.2)
    np.testing.assert_array_equal(B, [1.0, -2.0, 3.0])
    np.testing.assert_array_equal(g, np.zeros(5))


def test_planar_linear_field_example():
    a, d = 2.5, 0.4
    off = cross_offsets(d)
    R = np.array([[a * p[0], -a * p[1], 0.0] for p in off])
    _, g = recover_gradient(R, offsets=off)
    np.testing.assert_allclose(g, [a, 0, 0, -a, 0], atol=1e-15)


def test_degenerate_array():
    R = np.zeros((4, 3))
    with pytest.raises(DegenerateArray):
        recover_gradient(R, baseline=0.0)
    with pytest.raises(DegenerateArray):
        recover_gradient(R)
    bad = cross_offsets(0.4)
    bad[2] = [0.1, 0.0, 0.0]
    with pytest.raises(DegenerateArray):
        recover_gradient(R, offsets=bad)
    with pytest.raises(DegenerateArray):
        MagArrayModel(baseline=-1.0)


def test_gradient_error_second_order(demo_cfg):
    w = world_from_config(demo_cfg["world"])
    t = np.linspace(0, 120, 301)
    C, r = planar_pose_3d(*lawnmower_revisit().state(t))
    g_true = _body_gradient(w, C, r)
    errs = []
    for d in (0.04, 0.08, 0.16):
        R = simulate_array(w, C, r, MagArrayModel(baseline=d, noise_std=0.0))
        _, g = recover_gradient(R, baseline=d)
        errs.append(np.sqrt(np.mean((g - g_true) ** 2)))
    # halving the baseline cuts the error about four times
    assert 3.5 < errs[1] / errs[0] < 4.5 and 3.5 < errs[2] / errs[1] < 4.5


def test_R_G_matches_monte_carlo():
    m = MagArrayModel(baseline=0.2, noise_std=0.1)
    rng = np.random.default_rng(0)
    n = 200_000
    R = rng.normal(0.0, m.noise_std, size=(n, 4, 3))
    B, g = recover_gradient(R, baseline=m.baseline)
    np.testing.assert_allclose(np.cov(g.T), m.R_G, atol=0.03 * np.max(m.R_G))
    np.testing.assert_allclose(np.cov(B.T), m.R_B, atol=0.03 * np.max(m.R_B))


def test_gradient_map_equals_recovery(rng):
    R = rng.normal(size=(4, 3))
    _, g = recover_gradient(R, baseline=0.3)
    np.testing.assert_allclose(gradient_map(0.3) @ R.ravel(), g, atol=1e-12)


# --- preintegration ----------------------------------------------------------------


def test_preintegrate_examples():
    dth, var = preintegrate_gyro([0.2], [0.2], 0.0, 0.2, Q=1.0)
    assert dth == pytest.approx(0.04) and var == pytest.approx(0.2)
    t = np.arange(1, 11) / 50.0
    dth, _ = preintegrate_gyro(t, np.full(10, 0.5), 0.0, 0.2, Q=1.0)
    assert dth == pytest.approx(0.1, abs=1e-15)


def test_preintegrate_empty_interval():
    with pytest.raises(EmptyInterval):
        preintegrate_gyro([1.0, 2.0], [0.1, 0.1], 2.0, 3.0, Q=0.1)
    with pytest.raises(EmptyInterval):
        preintegrate_all([0.1, 0.2], [0.0, 0.0], [0.0, 0.2, 0.4], Q=0.1)


@given(st.integers(1, 40), st.integers(1, 40), st.floats(1e-4, 1.0))
def test_variance_additivity(n1, n2, Q):
    t = np.arange(1, n1 + n2 + 1) / 50.0
    u = np.sin(t)
    t_mid = t[n1 - 1]
    _, v1 = preintegrate_gyro(t, u, 0.0, t_mid, Q)
    _, v2 = preintegrate_gyro(t, u, t_mid, t[-1], Q)
    d, v = preintegrate_gyro(t, u, 0.0, t[-1], Q)
    assert abs(v - (v1 + v2)) < 1e-15
    d1, _ = preintegrate_gyro(t, u, 0.0, t_mid, Q)
    d2, _ = preintegrate_gyro(t, u, t_mid, t[-1], Q)
    assert abs(d - (d1 + d2)) < 1e-14


def test_preintegrate_all_matches_scalar(rng):
    t = np.arange(1, 501) / 50.0
    u = rng.normal(size=500)
    t_key = np.arange(0, 51) * 0.2
    dth, var = preintegrate_all(t, u, t_key, 0.3)
    for k in range(50):
        d, v = preintegrate_gyro(t, u, t_key[k], t_key[k + 1], 0.3)
        assert dth[k] == pytest.approx(d, abs=1e-14) and var[k] == pytest.approx(v, abs=1e-15)


def test_noise_free_preintegration_recovers_heading_change():
    traj = lawnmower_revisit()
    t, u = simulate_gyro(traj, GyroModel(Q=0.0))
    t_key = np.arange(0, 601) * 0.2
    dth, _ = preintegrate_all(t, u, t_key, 0.0)
    np.testing.assert_allclose(dth, np.diff(traj.unwrapped_heading(t_key)), atol=1e-12)


# --- wheel -------------------------------------------------------------------------


def test_wheel_dead_reckoning_noise_free():
    traj = lawnmower_revisit()
    t_g, u = simulate_gyro(traj, GyroModel(Q=0.0))
    t_w, v = simulate_wheel(traj, WheelModel(0.0, 0.0), seed=0)
    t_out = np.linspace(0, 120, 61)
    x, y, th = dead_reckon(t_g, u, t_w, v, traj.start, t_out)
    xt, yt, _ = traj.state(t_out)
    assert np.max(np.hypot(x - xt, y - yt)) < 2e-3
