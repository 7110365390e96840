"""Trajectory error metrics: first-pose alignment, RMSE, NEES."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import chi2

from .errors import NoOverlappingTimestamps
from .geometry import wrap_angle


def associate(t_est, t_true, tol):
    """Nearest truth sample for each estimate time, within ``tol`` seconds.

    Returns index arrays (est_idx, true_idx); raises if nothing matches.
    """
    t_est = np.asarray(t_est, dtype=float)
    t_true = np.asarray(t_true, dtype=float)
    if t_true.size == 0 or t_est.size == 0:
        raise NoOverlappingTimestamps("empty time series")
    if len(t_true) == 1:
        k = np.zeros(len(t_est), dtype=int)
    else:
        k = np.clip(np.searchsorted(t_true, t_est), 1, len(t_true) - 1)
        left = k - 1
        k = np.where(np.abs(t_true[left] - t_est) <= np.abs(t_true[k] - t_est), left, k)
    ok = np.abs(t_true[k] - t_est) <= tol
    if not np.any(ok):
        raise NoOverlappingTimestamps(f"no estimate within {tol} s of a truth sample")
    return np.nonzero(ok)[0], k[ok]


def align_first_pose(theta, r, theta0_true, r0_true):
    """Rigidly move the estimate so its first pose equals the true first pose."""
    theta = np.asarray(theta, dtype=float)
    r = np.asarray(r, dtype=float)
    dth = theta0_true - theta[0]
    c, s = np.cos(dth), np.sin(dth)
    R = np.array([[c, -s], [s, c]])
    r_al = (r - r[0]) @ R.T + np.asarray(r0_true, dtype=float)
    return wrap_angle(theta + dth), r_al


def pose_errors(theta, r, theta_true, r_true):
    """Right-perturbation errors ``log(T_est^-1 T_true)`` per pose, (K, 3).

    The first-order form is used: body-frame position error and wrapped
    heading error, which is what the covariances describe.
    """
    dth = wrap_angle(np.asarray(theta_true) - np.asarray(theta))
    d = np.asarray(r_true) - np.asarray(r)
    c, s = np.cos(theta), np.sin(theta)
    ex = c * d[:, 0] + s * d[:, 1]
    ey = -s * d[:, 0] + c * d[:, 1]
    return np.column_stack([dth, ex, ey])


def nees(errors, covariances):
    """Per-pose ``e^T P^-1 e``."""
    L = np.linalg.cholesky(covariances)
    z = np.linalg.solve(L, errors[..., None])[..., 0]
    return np.sum(z * z, axis=1)


def nees_bounds(dof=3, alpha=0.05, runs=1):
    """Two-sided chi-square bounds on the NEES averaged over ``runs``."""
    lo = chi2.ppf(alpha / 2, dof * runs) / runs
    hi = chi2.ppf(1 - alpha / 2, dof * runs) / runs
    return float(lo), float(hi)


@dataclass
class MetricsReport:
    position_rmse: float
    attitude_rmse: float
    nees: np.ndarray = field(default_factory=lambda: np.zeros(0))
    nees_bounds: tuple = (float("nan"), float("nan"))
    fraction_within: float = float("nan")
    ablation: list = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "position_rmse_m": self.position_rmse,
            "attitude_rmse_rad": self.attitude_rmse,
            "nees_mean": float(np.mean(self.nees)) if self.nees.size else None,
            "nees_lower": self.nees_bounds[0],
            "nees_upper": self.nees_bounds[1],
            "fraction_within_bounds": self.fraction_within if self.nees.size else None,
        }


def evaluate(t_est, theta, r, t_true, theta_true, r_true, covariances=None, key_period=0.2,
             alpha=0.05):
    """Align, associate and score an estimate against ground truth."""
    ie, it = associate(t_est, t_true, 0.5 * key_period)
    theta = np.asarray(theta, dtype=float)[ie]
    r = np.asarray(r, dtype=float)[ie]
    th_t = np.asarray(theta_true, dtype=float)[it]
    r_t = np.asarray(r_true, dtype=float)[it]
    theta, r = align_first_pose(theta, r, th_t[0], r_t[0])
    pos = float(np.sqrt(np.mean(np.sum((r - r_t) ** 2, axis=1))))
    att = float(np.sqrt(np.mean(wrap_angle(theta - th_t) ** 2)))
    report = MetricsReport(pos, att)
    if covariances is not None:
        P = np.asarray(covariances, dtype=float)[ie]
        series = nees(pose_errors(theta, r, th_t, r_t), P)
        lo, hi = nees_bounds(3, alpha)
        report.nees = series
        report.nees_bounds = (lo, hi)
        report.fraction_within = float(np.mean((series >= lo) & (series <= hi)))
    return report


__all__ = [
    "MetricsReport",
    "align_first_pose",
    "associate",
    "evaluate",
    "nees",
    "nees_bounds",
    "pose_errors",
]
