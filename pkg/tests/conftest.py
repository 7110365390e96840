import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from magnav.geometry import Pose2
from magnav.io import load_config

settings.register_profile(
    "default", max_examples=100, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


def random_pose(rng, spread=5.0):
    return Pose2.from_xyt(*rng.uniform(-spread, spread, 2), rng.uniform(-np.pi, np.pi))


def random_sym_traceless(rng, scale=10.0):
    A = rng.normal(scale=scale, size=(3, 3))
    A = 0.5 * (A + A.T)
    return A - np.trace(A) / 3.0 * np.eye(3)


def random_rotation(rng):
    """Uniform random 3D rotation (QR of a Gaussian matrix, sign-fixed)."""
    Q, R = np.linalg.qr(rng.normal(size=(3, 3)))
    Q = Q @ np.diag(np.sign(np.diag(R)))
    if np.linalg.det(Q) < 0:
        Q[:, 0] = -Q[:, 0]
    return Q


def numeric_jacobian(fun, poses, h=1e-6):
    """Central differences of ``fun(*poses)`` w.r.t. right perturbations."""
    base = np.atleast_1d(np.asarray(fun(*poses), dtype=float))
    J = np.zeros((base.size, 3 * len(poses)))
    for p in range(len(poses)):
        for c in range(3):
            d = np.zeros(3)
            d[c] = h
            plus = list(poses)
            minus = list(poses)
            plus[p] = poses[p].oplus(d)
            minus[p] = poses[p].oplus(-d)
            fp = np.atleast_1d(np.asarray(fun(*plus), dtype=float))
            fm = np.atleast_1d(np.asarray(fun(*minus), dtype=float))
            J[:, 3 * p + c] = (fp - fm) / (2.0 * h)
    return J


def jacobian_rel_err(J, J_num):
    scale = max(np.linalg.norm(J_num), np.linalg.norm(J), 1e-12)
    return np.linalg.norm(np.asarray(J) - J_num) / scale


@pytest.fixture(scope="session")
def demo_cfg():
    return load_config("demo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
