"""Rate gyro and four-magnetometer array: simulation and preprocessing.

The array is a planar cross in the body frame: sensors at (+d/2, 0, 0),
(-d/2, 0, 0), (0, +d/2, 0), (0, -d/2, 0), in that order. Centered
differences across each arm give the two planar derivative columns of the
gradient at the array center; the z-derivatives follow from the field being
curl-free, and tracelessness supplies the last diagonal entry.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateArray, EmptyInterval
from .magnetostatics import MagWorld, eval_field, unvdash


@dataclass(frozen=True)
class GyroModel:
    """Scalar yaw-rate gyro.

    ``Q`` is the white-noise intensity in (rad/sqrt(s))^2, so one sample at
    ``rate`` Hz has variance ``Q * rate``.
    """

    Q: float = 0.13**2
    rate: float = 50.0
    bias: float = 0.0

    def __post_init__(self):
        if not self.Q >= 0.0:
            raise ValueError("gyro noise intensity must be non-negative")


def cross_offsets(baseline: float) -> np.ndarray:
    h = 0.5 * baseline
    return np.array([[h, 0.0, 0.0], [-h, 0.0, 0.0], [0.0, h, 0.0], [0.0, -h, 0.0]])


@dataclass(frozen=True)
class MagArrayModel:
    baseline: float = 0.4
    noise_std: float = 0.1  # uT per axis per sensor
    rate: float = 25.0
    # optional calibration errors, (4, 3) each; None means perfectly calibrated
    bias: np.ndarray | None = None
    scale: np.ndarray | None = None
    offsets: np.ndarray = field(init=False)

    def __post_init__(self):
        if not self.baseline > 0.0:
            raise DegenerateArray("array baseline must be positive")
        object.__setattr__(self, "offsets", cross_offsets(self.baseline))

    @property
    def R_B(self) -> np.ndarray:
        """Covariance of the averaged field, uT^2."""
        return np.eye(3) * self.noise_std**2 / 4.0

    @property
    def R_G(self) -> np.ndarray:
        """Covariance of the packed gradient, (uT/m)^2, from the linear map."""
        M = gradient_map(self.baseline)
        return self.noise_std**2 * M @ M.T


def gradient_map(baseline: float) -> np.ndarray:
    """Linear map from the 12 stacked readings to the packed gradient."""
    d = baseline
    M = np.zeros((5, 12))
    ix = lambda s, c: 3 * s + c  # noqa: E731
    # dBx/dx
    M[0, ix(0, 0)], M[0, ix(1, 0)] = 1 / d, -1 / d
    # (dBy/dx + dBx/dy) / 2
    M[1, ix(0, 1)], M[1, ix(1, 1)] = 0.5 / d, -0.5 / d
    M[1, ix(2, 0)], M[1, ix(3, 0)] = 0.5 / d, -0.5 / d
    # dBz/dx
    M[2, ix(0, 2)], M[2, ix(1, 2)] = 1 / d, -1 / d
    # dBy/dy
    M[3, ix(2, 1)], M[3, ix(3, 1)] = 1 / d, -1 / d
    # dBz/dy
    M[4, ix(2, 2)], M[4, ix(3, 2)] = 1 / d, -1 / d
    return M


def simulate_gyro(traj, model: GyroModel, seed=None, t_end=None):
    """Yaw-rate samples at ``model.rate``; returns (t, u).

    Each sample is the mean true rate over its sample interval
    (t_{i-1}, t_i] minus white noise, which is what an integrating gyro
    reports; for a constant rate it equals the instantaneous rate.
    """
    rng = np.random.default_rng(seed)
    dt = 1.0 / model.rate
    t_end = traj.duration if t_end is None else t_end
    n = int(np.floor(t_end * model.rate + 1e-9))
    t = np.arange(1, n + 1) / model.rate
    heading = traj.unwrapped_heading(np.concatenate([[0.0], t]))
    true_rate = np.diff(heading) / dt
    w = rng.normal(0.0, np.sqrt(model.Q / dt), size=n) if model.Q > 0 else np.zeros(n)
    return t, true_rate + model.bias - w


def simulate_array(world: MagWorld, C_ab, r_a, model: MagArrayModel, rng=None):
    """Raw readings of the four magnetometers, body frame, uT.

    ``C_ab`` (N, 3, 3) or (3, 3) and ``r_a`` (N, 3) or (3,) give the array
    center pose. Returns (N, 4, 3) (or (4, 3) for a single pose).
    """
    C = np.asarray(C_ab, dtype=float)
    r = np.asarray(r_a, dtype=float)
    single = r.ndim == 1
    C = C.reshape(-1, 3, 3)
    r = r.reshape(-1, 3)
    N = r.shape[0]
    pts = r[:, None, :] + np.einsum("nij,sj->nsi", C, model.offsets)
    B_a, _ = eval_field(world, pts.reshape(-1, 3))
    B_a = B_a.reshape(N, 4, 3)
    readings = np.einsum("nji,nsj->nsi", C, B_a)
    if model.scale is not None:
        readings = readings * np.asarray(model.scale)[None]
    if model.bias is not None:
        readings = readings + np.asarray(model.bias)[None]
    if model.noise_std > 0:
        rng = np.random.default_rng(rng)
        readings = readings + rng.normal(0.0, model.noise_std, size=readings.shape)
    return readings[0] if single else readings


def recover_gradient(readings, offsets=None, baseline=None):
    """Mean field and packed gradient from cross-array readings.

    readings: (4, 3) or (N, 4, 3). Returns (B, g) with shapes (3,), (5,) or
    (N, 3), (N, 5).
    """
    readings = np.asarray(readings, dtype=float)
    if baseline is None:
        if offsets is None:
            raise DegenerateArray("need offsets or baseline")
        offsets = np.asarray(offsets, dtype=float)
        baseline = 2.0 * abs(offsets[0, 0])
    if offsets is not None and not np.allclose(offsets, cross_offsets(baseline), atol=1e-12):
        raise DegenerateArray("offsets are not the +/-d/2 cross layout")
    if not baseline > 0:
        raise DegenerateArray("array baseline must be positive")
    single = readings.ndim == 2
    R = readings.reshape(-1, 4, 3)
    B = R.mean(axis=1)
    dBdx = (R[:, 0] - R[:, 1]) / baseline
    dBdy = (R[:, 2] - R[:, 3]) / baseline
    g = np.column_stack(
        [dBdx[:, 0], 0.5 * (dBdx[:, 1] + dBdy[:, 0]), dBdx[:, 2], dBdy[:, 1], dBdy[:, 2]]
    )
    if single:
        return B[0], g[0]
    return B, g


def preintegrate_gyro(t, u, t_start, t_stop, Q):
    """Heading increment and its variance over (t_start, t_stop].

    Each sample covers the interval back to the previous sample time (the
    first one back to ``t_start``).
    """
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    mask = (t > t_start) & (t <= t_stop)
    if not np.any(mask):
        raise EmptyInterval(f"no gyro samples in ({t_start}, {t_stop}]")
    ts = t[mask]
    dt = np.diff(np.concatenate([[t_start], ts]))
    return float(np.sum(u[mask] * dt)), float(Q * np.sum(dt))


def preintegrate_all(t, u, t_key, Q):
    """Vectorized :func:`preintegrate_gyro` between consecutive keyframe times."""
    t = np.asarray(t, dtype=float)
    u = np.asarray(u, dtype=float)
    t_key = np.asarray(t_key, dtype=float)
    n_int = len(t_key) - 1
    bins = np.searchsorted(t_key, t, side="left") - 1
    ok = (bins >= 0) & (bins < n_int)
    prev = np.concatenate([[-np.inf], t[:-1]])
    dt = t - np.maximum(prev, t_key[np.clip(bins, 0, n_int)])
    b, dt, u = bins[ok], dt[ok], u[ok]
    counts = np.bincount(b, minlength=n_int)
    if np.any(counts == 0):
        k = int(np.argmin(counts))
        raise EmptyInterval(f"no gyro samples in ({t_key[k]}, {t_key[k + 1]}]")
    dtheta = np.bincount(b, weights=u * dt, minlength=n_int)
    var = Q * np.bincount(b, weights=dt, minlength=n_int)
    return dtheta, var


def planar_pose_3d(x, y, theta):
    """Stacked 3D DCMs and positions (z = 0) for planar poses."""
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    c, s = np.cos(theta), np.sin(theta)
    C = np.zeros((theta.shape[0], 3, 3))
    C[:, 0, 0], C[:, 0, 1], C[:, 1, 0], C[:, 1, 1] = c, -s, s, c
    C[:, 2, 2] = 1.0
    r = np.column_stack([np.atleast_1d(x), np.atleast_1d(y), np.zeros(theta.shape[0])])
    return C, r


@dataclass(frozen=True)
class WheelModel:
    """Wheel-encoder speed: ``(1 + scale_error) v + noise``.

    ``scale_std`` sets the per-run scale factor error (effective wheel
    radius mismatch); ``noise_std`` is the per-sample speed noise in m/s.
    """

    scale_std: float = 0.03
    noise_std: float = 0.02
    rate: float = 50.0


def simulate_wheel(traj, model: WheelModel, seed=None):
    rng = np.random.default_rng(seed)
    dt = 1.0 / model.rate
    n = int(np.floor(traj.duration * model.rate + 1e-9))
    t = np.arange(1, n + 1) / model.rate
    dist = traj.distance(np.concatenate([[0.0], t]))
    v = np.diff(dist) / dt
    scale = 1.0 + rng.normal(0.0, model.scale_std)
    return t, scale * v + rng.normal(0.0, model.noise_std, size=n)


def dead_reckon(t_gyro, u, t_wheel, v, start, t_out):
    """Integrate wheel speed along gyro headings; poses at ``t_out``.

    Both streams are assumed to share sample times (as simulated); a
    midpoint heading is used within each sample interval.
    """
    t_gyro = np.asarray(t_gyro, dtype=float)
    if not np.allclose(t_gyro, t_wheel):
        v = np.interp(t_gyro, t_wheel, v)
    dt = np.diff(np.concatenate([[0.0], t_gyro]))
    th = start[2] + np.concatenate([[0.0], np.cumsum(u * dt)])
    mid = 0.5 * (th[:-1] + th[1:])
    x = start[0] + np.concatenate([[0.0], np.cumsum(v * dt * np.cos(mid))])
    y = start[1] + np.concatenate([[0.0], np.cumsum(v * dt * np.sin(mid))])
    tt = np.concatenate([[0.0], t_gyro])
    return (
        np.interp(t_out, tt, x),
        np.interp(t_out, tt, y),
        np.interp(t_out, tt, th),
    )


__all__ = [
    "GyroModel",
    "MagArrayModel",
    "WheelModel",
    "cross_offsets",
    "gradient_map",
    "simulate_gyro",
    "simulate_array",
    "simulate_wheel",
    "recover_gradient",
    "preintegrate_gyro",
    "preintegrate_all",
    "planar_pose_3d",
    "dead_reckon",
    "unvdash",
]
