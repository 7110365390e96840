"""SO(2)/SE(2) helpers.

Tangent vectors of SE(2) are ordered ``(phi, rho_x, rho_y)``: rotation
first, translation second. Everywhere in the package a pose is perturbed on
the right, ``T <- T @ se2_exp(delta)``, so the error ``log(T^-1 T_check)``
is invariant to a common left transform of both arguments.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# below this angle the trig ratios switch to their Taylor series
_SMALL = 1e-4

_J2 = np.array([[0.0, -1.0], [1.0, 0.0]])


def wrap_angle(phi):
    """Wrap to (-pi, pi]."""
    out = np.mod(np.asarray(phi, dtype=float) + np.pi, 2.0 * np.pi) - np.pi
    out = np.where(out == -np.pi, np.pi, out)
    if np.ndim(out) == 0:
        return float(out)
    return out


def so2_exp(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s], [s, c]])


def so2_log(C: np.ndarray) -> float:
    return float(np.arctan2(C[1, 0], C[0, 0]))


def rot_z(phi: float) -> np.ndarray:
    c, s = np.cos(phi), np.sin(phi)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _trig_ratios(phi: float):
    """Return sin(p)/p, (1-cos p)/p, (p - sin p)/p^2, (1 - cos p)/p^2."""
    if abs(phi) < _SMALL:
        p2 = phi * phi
        a = 1.0 - p2 / 6.0
        b = phi / 2.0 - phi * p2 / 24.0
        c = phi / 6.0 - phi * p2 / 120.0
        d = 0.5 - p2 / 24.0
        return a, b, c, d
    s, cs = np.sin(phi), np.cos(phi)
    return s / phi, (1.0 - cs) / phi, (phi - s) / phi**2, (1.0 - cs) / phi**2


def so2_V(phi: float) -> np.ndarray:
    """Translation coupling matrix of the SE(2) exponential."""
    a, b, _, _ = _trig_ratios(phi)
    return np.array([[a, -b], [b, a]])


def so2_V_inv(phi: float) -> np.ndarray:
    # (phi/2) cot(phi/2) is finite on (-2pi, 2pi); at phi = pi it is 0 and
    # the inverse reduces to (pi/2) * [[0, 1], [-1, 0]]
    if abs(phi) < _SMALL:
        a = 1.0 - phi * phi / 12.0
    else:
        a = 0.5 * phi * np.sin(phi) / (1.0 - np.cos(phi))
    h = 0.5 * phi
    return np.array([[a, h], [-h, a]])


@dataclass(frozen=True)
class Pose2:
    """Planar pose: heading DCM ``C`` (body to world) and position ``r``."""

    C: np.ndarray
    r: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "C", np.asarray(self.C, dtype=float).reshape(2, 2))
        object.__setattr__(self, "r", np.asarray(self.r, dtype=float).reshape(2))

    @classmethod
    def from_xyt(cls, x: float, y: float, theta: float) -> "Pose2":
        return cls(so2_exp(theta), np.array([x, y], dtype=float))

    @classmethod
    def identity(cls) -> "Pose2":
        return cls(np.eye(2), np.zeros(2))

    @property
    def theta(self) -> float:
        return so2_log(self.C)

    def inverse(self) -> "Pose2":
        return Pose2(self.C.T, -self.C.T @ self.r)

    def __matmul__(self, other: "Pose2") -> "Pose2":
        return Pose2(self.C @ other.C, self.C @ other.r + self.r)

    def matrix(self) -> np.ndarray:
        T = np.eye(3)
        T[:2, :2] = self.C
        T[:2, 2] = self.r
        return T

    def oplus(self, delta) -> "Pose2":
        """Right perturbation ``T exp(delta)``."""
        return self @ se2_exp(delta)


def se2_exp(xi) -> Pose2:
    xi = np.asarray(xi, dtype=float)
    phi = float(xi[0])
    return Pose2(so2_exp(phi), so2_V(phi) @ xi[1:3])


def se2_log(T: Pose2) -> np.ndarray:
    """Inverse of :func:`se2_exp`; the returned angle lies in (-pi, pi]."""
    phi = wrap_angle(so2_log(T.C))
    rho = so2_V_inv(phi) @ T.r
    return np.array([phi, rho[0], rho[1]])


def se2_left_jacobian(xi) -> np.ndarray:
    """``exp(xi + d) ~= exp(J_l(xi) d) exp(xi)``."""
    phi, r1, r2 = (float(v) for v in xi)
    a, b, c, d = _trig_ratios(phi)
    return np.array(
        [
            [1.0, 0.0, 0.0],
            [r1 * c + r2 * d, a, -b],
            [-r1 * d + r2 * c, b, a],
        ]
    )


def se2_right_jacobian(xi) -> np.ndarray:
    """``exp(xi + d) ~= exp(xi) exp(J_r(xi) d)``."""
    return se2_left_jacobian(-np.asarray(xi, dtype=float))


def se2_adjoint(T: Pose2) -> np.ndarray:
    Ad = np.eye(3)
    Ad[1:, 1:] = T.C
    Ad[1:, 0] = -_J2 @ T.r
    return Ad


def pad_to_3d(T: Pose2):
    """3D DCM (rotation about the third axis) and position with z = 0."""
    return rot_z(T.theta), np.array([T.r[0], T.r[1], 0.0])


def poses_to_arrays(poses) -> tuple[np.ndarray, np.ndarray]:
    theta = np.array([p.theta for p in poses])
    r = np.array([p.r for p in poses]).reshape(-1, 2)
    return theta, r


def arrays_to_poses(theta, r) -> list[Pose2]:
    return [Pose2.from_xyt(x, y, t) for (x, y), t in zip(r, theta)]


def retract(theta: np.ndarray, r: np.ndarray, delta: np.ndarray):
    """Apply per-pose right perturbations ``delta`` (N x 3) to array state."""
    dphi = delta[:, 0]
    a = np.empty_like(dphi)
    b = np.empty_like(dphi)
    small = np.abs(dphi) < _SMALL
    p = dphi[~small]
    a[~small] = np.sin(p) / p
    b[~small] = (1.0 - np.cos(p)) / p
    p = dphi[small]
    a[small] = 1.0 - p * p / 6.0
    b[small] = p / 2.0 - p**3 / 24.0
    # V(dphi) rho, then rotate into world by the current heading
    vx = a * delta[:, 1] - b * delta[:, 2]
    vy = b * delta[:, 1] + a * delta[:, 2]
    c, s = np.cos(theta), np.sin(theta)
    r_new = r + np.column_stack([c * vx - s * vy, s * vx + c * vy])
    return wrap_angle(theta + dphi), r_new
