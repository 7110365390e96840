"""Error terms of the batch problem and their Jacobians.

Every Jacobian is taken with respect to right perturbations
``T <- T exp(delta)``, delta = (phi, rho_x, rho_y), stacked per involved
pose in the order the poses are passed. Pseudomeasurement residuals are
"measured" as zero, so the residual is the predicted value itself.

Sign conventions:

* gyro: ``wrap(theta_{k-1} + dtheta - theta_k)``, positive when the later
  heading lags the propagated one.
* loop: ``r_j - r_i`` in the world frame.
* slip: body-y component (left positive) of the displacement into pose b.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import Pose2, rot_z, se2_left_jacobian, se2_log, wrap_angle
from .magnetostatics import unvdash

KINDS = ("prior", "gyro", "fd_mag", "cd_mag", "slip", "loop")
DIMS = {"prior": 3, "gyro": 1, "fd_mag": 3, "cd_mag": 3, "slip": 1, "loop": 2}
ARITY = {"prior": 1, "gyro": 2, "fd_mag": 2, "cd_mag": 3, "slip": 2, "loop": 2}

_KZ = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
_J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


@dataclass
class ResidualBlock:
    """One error term.

    ``payload`` holds the measurement: the prior mean (Pose2) for "prior",
    the preintegrated heading increment for "gyro", a dict with body-frame
    fields/gradient for the magnetic terms, nothing for slip and loop.
    """

    kind: str
    indices: tuple
    cov: np.ndarray
    payload: object = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown residual kind {self.kind!r}")
        self.indices = tuple(int(i) for i in self.indices)
        if len(self.indices) != ARITY[self.kind]:
            raise ValueError(f"{self.kind} takes {ARITY[self.kind]} pose indices")
        if len(set(self.indices)) != len(self.indices):
            raise ValueError("pose indices of a block must be distinct")
        d = DIMS[self.kind]
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        if cov.shape != (d, d):
            raise ValueError(f"{self.kind} covariance must be {d}x{d}, got {cov.shape}")
        if not np.allclose(cov, cov.T) or np.any(np.linalg.eigvalsh(cov) <= 0):
            raise ValueError(f"{self.kind} covariance must be symmetric positive definite")
        self.cov = cov

    @property
    def dim(self) -> int:
        return DIMS[self.kind]


# --- scalar reference implementations -------------------------------------


def prior_error(T0: Pose2, prior: Pose2, jacobian=False):
    """``log(T0^-1 prior)``; Jacobian is ``-J_l(e)^-1``."""
    e = se2_log(T0.inverse() @ prior)
    if not jacobian:
        return e
    return e, -np.linalg.inv(se2_left_jacobian(e))


def gyro_error(C_k, C_km1, dtheta, jacobian=False):
    """SO(2) process error between consecutive headings, columns (k-1, k)."""
    C_k = np.asarray(C_k)
    C_km1 = np.asarray(C_km1)
    E = C_k.T @ C_km1 @ np.array(
        [[np.cos(dtheta), -np.sin(dtheta)], [np.sin(dtheta), np.cos(dtheta)]]
    )
    e = float(np.arctan2(E[1, 0], E[0, 0]))
    if not jacobian:
        return e
    return e, np.array([[1.0, -1.0]])


def _pad3(T: Pose2):
    return rot_z(T.theta), np.array([T.r[0], T.r[1], 0.0])


def fd_mag_error(Ta: Pose2, Tb: Pose2, B_a, B_b, g_b, jacobian=False):
    """Forward-difference pseudomeasurement at ``b`` (uT).

    ``G_b C_b^T (r_b - r_a) - (B_b - C_b^T C_a B_a)`` with poses padded to
    3D. Jacobian columns: (phi_a, rho_a, phi_b, rho_b).
    """
    Ca, ra = _pad3(Ta)
    Cb, rb = _pad3(Tb)
    G = unvdash(g_b)
    B_a = np.asarray(B_a, dtype=float)
    B_b = np.asarray(B_b, dtype=float)
    u = Cb.T @ (rb - ra)
    w = Cb.T @ Ca @ B_a
    e = G @ u - (B_b - w)
    if not jacobian:
        return e
    J = np.zeros((3, 6))
    J[:, 0] = Cb.T @ Ca @ _KZ @ B_a
    J[:, 1:3] = -G[:, :2] @ (Tb.C.T @ Ta.C)
    J[:, 3] = -G @ _KZ @ u - _KZ @ w
    J[:, 4:6] = G[:, :2]
    return e, J


def cd_mag_error(Ta: Pose2, Tb: Pose2, Tc: Pose2, B_a, B_c, g_b, jacobian=False):
    """Central-difference pseudomeasurement at ``b`` (uT).

    ``G_b C_b^T (r_c - r_a) - (C_b^T C_c B_c - C_b^T C_a B_a)``. Jacobian
    columns: (phi_a, rho_a, phi_b, rho_b, phi_c, rho_c).
    """
    Ca, ra = _pad3(Ta)
    Cb, _ = _pad3(Tb)
    Cc, rc = _pad3(Tc)
    G = unvdash(g_b)
    B_a = np.asarray(B_a, dtype=float)
    B_c = np.asarray(B_c, dtype=float)
    u = Cb.T @ (rc - ra)
    dw = Cb.T @ Cc @ B_c - Cb.T @ Ca @ B_a
    e = G @ u - dw
    if not jacobian:
        return e
    J = np.zeros((3, 9))
    J[:, 0] = Cb.T @ Ca @ _KZ @ B_a
    J[:, 1:3] = -G[:, :2] @ (Tb.C.T @ Ta.C)
    J[:, 3] = -G @ _KZ @ u + _KZ @ dw
    J[:, 6] = -Cb.T @ Cc @ _KZ @ B_c
    J[:, 7:9] = G[:, :2] @ (Tb.C.T @ Tc.C)
    return e, J


def slip_error(Ta: Pose2, Tb: Pose2, jacobian=False):
    """Body-y displacement ``[0 1] C_b^T (r_b - r_a)`` (m)."""
    u = Tb.C.T @ (Tb.r - Ta.r)
    e = float(u[1])
    if not jacobian:
        return e
    J = np.zeros((1, 6))
    J[0, 1:3] = -(Tb.C.T @ Ta.C)[1]
    J[0, 3] = -u[0]
    J[0, 4:6] = (0.0, 1.0)
    return e, J


def loop_error(Ti: Pose2, Tj: Pose2, jacobian=False):
    """``r_j - r_i`` (m), world frame."""
    e = Tj.r - Ti.r
    if not jacobian:
        return e
    J = np.zeros((2, 6))
    J[:, 1:3] = -Ti.C
    J[:, 4:6] = Tj.C
    return e, J


def evaluate_block(block: ResidualBlock, poses, jacobian=False):
    """Dispatch a :class:`ResidualBlock` to its scalar implementation."""
    P = [poses[i] for i in block.indices]
    k = block.kind
    if k == "prior":
        return prior_error(P[0], block.payload, jacobian)
    if k == "gyro":
        out = gyro_error(P[1].C, P[0].C, float(block.payload), jacobian)
        if jacobian:
            return np.array([out[0]]), out[1]
        return np.array([out])
    if k == "fd_mag":
        p = block.payload
        return fd_mag_error(P[0], P[1], p["B_a"], p["B_b"], p["g_b"], jacobian)
    if k == "cd_mag":
        p = block.payload
        return cd_mag_error(P[0], P[1], P[2], p["B_a"], p["B_c"], p["g_b"], jacobian)
    if k == "slip":
        out = slip_error(P[0], P[1], jacobian)
        if jacobian:
            return np.array([out[0]]), out[1]
        return np.array([out])
    return loop_error(P[0], P[1], jacobian)


def gyro_residuals(theta, ia, ib, dtheta):
    """Vectorized gyro errors; Jacobian is constant (+1, -1)."""
    return wrap_angle(theta[ia] + dtheta - theta[ib])
