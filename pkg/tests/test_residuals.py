import numpy as np
import pytest

from magnav import _kernels
from magnav.geometry import Pose2, se2_exp
from magnav.magnetostatics import eval_field, unvdash, vdash, world_from_config
from magnav.residuals import (
    ResidualBlock,
    cd_mag_error,
    evaluate_block,
    fd_mag_error,
    gyro_error,
    loop_error,
    prior_error,
    slip_error,
)
from magnav.sensors import planar_pose_3d

from .conftest import jacobian_rel_err, numeric_jacobian, random_pose, random_sym_traceless


def _neighbour(rng, T, step=0.3):
    return T.oplus(rng.normal(scale=step, size=3))


def _field(rng):
    return rng.normal(scale=30.0, size=3)


def _sample(world, T):
    """Noise-free body-frame (B, g) at a planar pose."""
    C, r = planar_pose_3d([T.r[0]], [T.r[1]], [T.theta])
    B, G = eval_field(world, r[0])
    return C[0].T @ B, vdash(C[0].T @ G @ C[0])


# --- examples ---------------------------------------------------------------------


def test_prior_examples():
    T = Pose2.from_xyt(1.0, 2.0, 0.3)
    np.testing.assert_allclose(prior_error(T, T), 0.0, atol=1e-15)
    e = prior_error(Pose2.identity(), Pose2.from_xyt(1.0, 0.0, 0.0))
    np.testing.assert_allclose(e, [0.0, 1.0, 0.0], atol=1e-15)


def test_gyro_examples():
    Ck = Pose2.from_xyt(0, 0, 0.5).C
    Ckm1 = Pose2.from_xyt(0, 0, 0.3).C
    assert gyro_error(Ck, Ckm1, 0.2) == pytest.approx(0.0, abs=1e-15)
    # the later heading lags the propagated one by 0.01 rad: error +0.01
    lag = Pose2.from_xyt(0, 0, 0.49).C
    assert gyro_error(lag, Ckm1, 0.2) == pytest.approx(0.01, abs=1e-14)


def test_fd_examples(rng):
    T = random_pose(rng)
    B, g = _field(rng), vdash(random_sym_traceless(rng))
    np.testing.assert_allclose(fd_mag_error(T, T, B, B, g), 0.0, atol=1e-12)
    T2 = Pose2(T.C, T.r + rng.normal(size=2))
    np.testing.assert_allclose(fd_mag_error(T, T2, B, B, np.zeros(5)), 0.0, atol=1e-12)


def test_cd_examples(rng):
    T = random_pose(rng)
    B, g = _field(rng), vdash(random_sym_traceless(rng))
    np.testing.assert_allclose(cd_mag_error(T, T, T, B, B, g), 0.0, atol=1e-12)
    Ta = Pose2(T.C, T.r - 0.1)
    Tc = Pose2(T.C, T.r + 0.2)
    np.testing.assert_allclose(cd_mag_error(Ta, T, Tc, B, B, np.zeros(5)), 0.0, atol=1e-12)


def test_slip_examples():
    Ta = Pose2.from_xyt(0.0, 0.0, np.pi / 4)
    fwd = Ta.oplus([0.0, 0.3, 0.0])
    assert slip_error(Ta, fwd) == pytest.approx(0.0, abs=1e-15)
    left = Ta.oplus([0.0, 0.0, 0.1])
    assert slip_error(Ta, left) == pytest.approx(0.1, abs=1e-15)
    right = Ta.oplus([0.0, 0.0, -0.1])
    assert slip_error(Ta, right) == pytest.approx(-0.1, abs=1e-15)


def test_loop_examples():
    T = Pose2.from_xyt(3.0, 1.0, 2.0)
    np.testing.assert_array_equal(loop_error(T, T), [0.0, 0.0])
    e = loop_error(Pose2.from_xyt(0, 0, 0.4), Pose2.from_xyt(1, 1, -1.0))
    np.testing.assert_array_equal(e, [1.0, 1.0])


# --- Jacobians against central differences ---------------------------------------------


N_JAC = 100


def test_prior_jacobian(rng):
    for _ in range(N_JAC):
        T, P = random_pose(rng), random_pose(rng)
        # keep log away from the pi cut where it is not differentiable
        if abs(prior_error(T, P)[0]) > 3.0:
            continue
        _, J = prior_error(T, P, jacobian=True)
        Jn = numeric_jacobian(lambda a: prior_error(a, P), [T])
        assert jacobian_rel_err(J, Jn) < 1e-6


def test_gyro_jacobian(rng):
    for _ in range(N_JAC):
        Tkm1 = random_pose(rng)
        Tk = _neighbour(rng, Tkm1)
        dth = rng.normal(scale=0.2)
        _, J = gyro_error(Tk.C, Tkm1.C, dth, jacobian=True)
        Jn = numeric_jacobian(lambda a, b: gyro_error(b.C, a.C, dth), [Tkm1, Tk])
        J6 = np.zeros((1, 6))
        J6[0, 0], J6[0, 3] = J[0, 0], J[0, 1]
        assert jacobian_rel_err(J6, Jn) < 1e-6


def test_fd_jacobian(rng):
    for _ in range(N_JAC):
        Ta = random_pose(rng)
        Tb = _neighbour(rng, Ta)
        Ba, Bb, g = _field(rng), _field(rng), vdash(random_sym_traceless(rng))
        _, J = fd_mag_error(Ta, Tb, Ba, Bb, g, jacobian=True)
        Jn = numeric_jacobian(lambda a, b: fd_mag_error(a, b, Ba, Bb, g), [Ta, Tb])
        assert jacobian_rel_err(J, Jn) < 1e-6


def test_cd_jacobian(rng):
    for _ in range(N_JAC):
        Ta = random_pose(rng)
        Tb = _neighbour(rng, Ta)
        Tc = _neighbour(rng, Tb)
        Ba, Bc, g = _field(rng), _field(rng), vdash(random_sym_traceless(rng))
        _, J = cd_mag_error(Ta, Tb, Tc, Ba, Bc, g, jacobian=True)
        Jn = numeric_jacobian(lambda a, b, c: cd_mag_error(a, b, c, Ba, Bc, g), [Ta, Tb, Tc])
        assert jacobian_rel_err(J, Jn) < 1e-6


def test_slip_jacobian(rng):
    for _ in range(N_JAC):
        Ta = random_pose(rng)
        Tb = _neighbour(rng, Ta)
        _, J = slip_error(Ta, Tb, jacobian=True)
        Jn = numeric_jacobian(slip_error, [Ta, Tb])
        assert jacobian_rel_err(J, Jn) < 1e-6


def test_loop_jacobian(rng):
    for _ in range(N_JAC):
        Ti, Tj = random_pose(rng), random_pose(rng)
        _, J = loop_error(Ti, Tj, jacobian=True)
        Jn = numeric_jacobian(loop_error, [Ti, Tj])
        assert jacobian_rel_err(J, Jn) < 1e-6


# --- vectorized kernels agree with the scalar definitions ----------------------------------


@pytest.mark.parametrize("impl", ["numpy_impl", "numba_impl"])
def test_block_kernels_match_scalar(rng, impl):
    mod = getattr(_kernels, impl)
    if mod is None:
        pytest.skip("numba not installed")
    n = 30
    poses = [random_pose(rng)]
    for _ in range(n + 1):
        poses.append(_neighbour(rng, poses[-1]))
    theta = np.array([p.theta for p in poses])
    r = np.array([p.r for p in poses])
    B = rng.normal(scale=30, size=(n + 2, 3))
    G = np.stack([random_sym_traceless(rng) for _ in range(n + 2)])
    ia = np.arange(n)
    e, J = mod.fd_blocks(theta, r, ia, ia + 1, B[ia], B[ia + 1], G[ia + 1])
    e2, J2 = mod.cd_blocks(theta, r, ia, ia + 1, ia + 2, B[ia], B[ia + 2], G[ia + 1])
    e3, J3 = mod.slip_blocks(theta, r, ia, ia + 1)
    for k in range(n):
        Pa, Pb, Pc = poses[k], poses[k + 1], poses[k + 2]
        ref, Jref = fd_mag_error(Pa, Pb, B[k], B[k + 1], vdash(G[k + 1]), jacobian=True)
        np.testing.assert_allclose(e[k], ref, atol=1e-11)
        np.testing.assert_allclose(J[k], Jref, atol=1e-11)
        ref, Jref = cd_mag_error(Pa, Pb, Pc, B[k], B[k + 2], vdash(G[k + 1]), jacobian=True)
        np.testing.assert_allclose(e2[k], ref, atol=1e-11)
        np.testing.assert_allclose(J2[k], Jref, atol=1e-11)
        ref, Jref = slip_error(Pa, Pb, jacobian=True)
        assert e3[k] == pytest.approx(ref, abs=1e-13)
        np.testing.assert_allclose(J3[k], Jref, atol=1e-13)


# --- behaviour on a true field ------------------------------------------------------------


def test_fd_truncation_is_second_order(demo_cfg, rng):
    w = world_from_config(demo_cfg["world"])
    ratios = []
    for _ in range(100):
        Tb = Pose2.from_xyt(rng.uniform(0, 18), rng.uniform(-3, 4), rng.uniform(-np.pi, np.pi))
        norms = []
        for step in (0.1, 0.05):
            Ta = Tb.oplus([0.0, -step, 0.0])
            Ba, _ = _sample(w, Ta)
            Bb, gb = _sample(w, Tb)
            norms.append(np.linalg.norm(fd_mag_error(Ta, Tb, Ba, Bb, gb)))
        ratios.append(norms[0] / norms[1])
    assert 3.5 < np.median(ratios) < 4.5


def test_cd_more_accurate_than_fd(demo_cfg, rng):
    w = world_from_config(demo_cfg["world"])
    wins = 0
    for _ in range(200):
        Tb = Pose2.from_xyt(rng.uniform(0, 18), rng.uniform(-3, 4), rng.uniform(-np.pi, np.pi))
        step = 0.1
        Ta, Tc = Tb.oplus([0.0, -step, 0.0]), Tb.oplus([0.0, step, 0.0])
        Ba, _ = _sample(w, Ta)
        Bb, gb = _sample(w, Tb)
        Bc, _ = _sample(w, Tc)
        fd = np.linalg.norm(fd_mag_error(Ta, Tb, Ba, Bb, gb))
        cd = np.linalg.norm(cd_mag_error(Ta, Tb, Tc, Ba, Bc, gb))
        wins += cd < fd
    assert wins >= 160


def test_magnetic_residuals_gauge_invariant(rng):
    # body-frame samples do not change under a global rigid move
    for _ in range(50):
        Ta = random_pose(rng)
        Tb = _neighbour(rng, Ta)
        Tc = _neighbour(rng, Tb)
        Ba, Bc, g = _field(rng), _field(rng), vdash(random_sym_traceless(rng))
        M = se2_exp(rng.normal(scale=3.0, size=3))
        np.testing.assert_allclose(
            fd_mag_error(M @ Ta, M @ Tb, Ba, Bc, g), fd_mag_error(Ta, Tb, Ba, Bc, g), atol=1e-10
        )
        np.testing.assert_allclose(
            cd_mag_error(M @ Ta, M @ Tb, M @ Tc, Ba, Bc, g),
            cd_mag_error(Ta, Tb, Tc, Ba, Bc, g),
            atol=1e-10,
        )
        assert slip_error(M @ Ta, M @ Tb) == pytest.approx(slip_error(Ta, Tb), abs=1e-10)


# --- block container -------------------------------------------------------------------


def test_block_validation():
    with pytest.raises(ValueError):
        ResidualBlock("odometry", (0, 1), np.eye(3))
    with pytest.raises(ValueError):
        ResidualBlock("slip", (0,), [[1.0]])
    with pytest.raises(ValueError):
        ResidualBlock("slip", (1, 1), [[1.0]])
    with pytest.raises(ValueError):
        ResidualBlock("fd_mag", (0, 1), np.eye(2))
    with pytest.raises(ValueError):
        ResidualBlock("loop", (0, 5), -np.eye(2))
    with pytest.raises(ValueError):
        ResidualBlock("loop", (0, 5), [[1.0, 0.5], [0.0, 1.0]])


def test_evaluate_block_dispatch(rng):
    poses = [random_pose(rng) for _ in range(3)]
    B, g = _field(rng), vdash(random_sym_traceless(rng))
    blk = ResidualBlock("cd_mag", (0, 1, 2), np.eye(3), {"B_a": B, "B_c": B, "g_b": g})
    np.testing.assert_array_equal(evaluate_block(blk, poses), cd_mag_error(*poses, B, B, g))
    blk = ResidualBlock("gyro", (0, 1), [[0.1]], 0.2)
    assert evaluate_block(blk, poses)[0] == gyro_error(poses[1].C, poses[0].C, 0.2)
    assert unvdash(g).shape == (3, 3)
