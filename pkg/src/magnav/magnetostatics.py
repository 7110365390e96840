"""Synthetic magnetostatic world and attitude-invariant field quantities.

Units: field in uT, gradient in uT/m, positions in m, dipole moments in
A m^2. ``dipole_scale`` is mu0 / (4 pi) expressed in uT m^3 / (A m^2).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import _kernels
from .errors import EvaluationInsideExclusionZone, NotSymmetricTraceless

MU0_OVER_4PI = 0.1  # uT m^3 / (A m^2)


@dataclass(frozen=True)
class MagWorld:
    """Uniform background (optionally with a constant gradient) plus point dipoles.

    ``background_gradient`` must be symmetric and traceless; it makes the
    background field exactly linear in position, ``B0 + G0 r``.
    """

    background: np.ndarray = field(default_factory=lambda: np.array([20.0, 0.0, 45.0]))
    dipole_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    dipole_moments: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    background_gradient: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    exclusion_radius: float = 0.3
    dipole_scale: float = MU0_OVER_4PI

    def __post_init__(self):
        pos = np.asarray(self.dipole_positions, dtype=float).reshape(-1, 3)
        mom = np.asarray(self.dipole_moments, dtype=float).reshape(-1, 3)
        if pos.shape != mom.shape:
            raise ValueError("dipole positions and moments must pair up")
        G0 = np.asarray(self.background_gradient, dtype=float).reshape(3, 3)
        check_symmetric_traceless(G0, tol=1e-8)
        object.__setattr__(self, "background", np.asarray(self.background, dtype=float).reshape(3))
        object.__setattr__(self, "dipole_positions", pos)
        object.__setattr__(self, "dipole_moments", mom)
        object.__setattr__(self, "background_gradient", G0)

    @property
    def n_dipoles(self) -> int:
        return self.dipole_positions.shape[0]

    def rotated(self, C: np.ndarray, t=None) -> "MagWorld":
        """World seen after applying the rigid map ``x -> C x + t``."""
        t = np.zeros(3) if t is None else np.asarray(t, dtype=float)
        G0 = C @ self.background_gradient @ C.T
        # keep B(C x + t) = C B_old(x); the linear term needs re-centering
        B0 = C @ self.background - G0 @ t
        return MagWorld(
            background=B0,
            dipole_positions=self.dipole_positions @ C.T + t,
            dipole_moments=self.dipole_moments @ C.T,
            background_gradient=G0,
            exclusion_radius=self.exclusion_radius,
            dipole_scale=self.dipole_scale,
        )


def eval_field(world: MagWorld, r_a):
    """Field and gradient at one point (3,) or many points (P, 3), world frame.

    Raises EvaluationInsideExclusionZone when any point is within
    ``world.exclusion_radius`` of a dipole.
    """
    pts = np.asarray(r_a, dtype=float)
    single = pts.ndim == 1
    pts = np.ascontiguousarray(pts.reshape(-1, 3))
    B, G, dmin = _kernels.dipole_field(
        pts, world.dipole_positions, world.dipole_moments, world.dipole_scale
    )
    bad = dmin <= world.exclusion_radius
    if np.any(bad):
        k = int(np.argmax(bad))
        raise EvaluationInsideExclusionZone(
            f"point {pts[k]} is {dmin[k]:.3f} m from a dipole "
            f"(exclusion radius {world.exclusion_radius} m)"
        )
    B = B + world.background + pts @ world.background_gradient.T
    G = G + world.background_gradient
    if single:
        return B[0], G[0]
    return B, G


def check_symmetric_traceless(G, tol=1e-8):
    G = np.asarray(G, dtype=float)
    scale = max(1.0, float(np.max(np.abs(G), initial=0.0)))
    asym = np.max(np.abs(G - np.swapaxes(G, -1, -2)), initial=0.0)
    tr = np.max(np.abs(np.trace(G, axis1=-2, axis2=-1)), initial=0.0)
    if asym > tol * scale or tr > tol * scale:
        raise NotSymmetricTraceless(
            f"gradient not symmetric/traceless (asym {asym:.2e}, trace {tr:.2e})"
        )


def vdash(G) -> np.ndarray:
    """Pack the five unique gradient entries as (xx, xy, xz, yy, yz).

    Accepts a single 3x3 matrix or a stack (..., 3, 3).
    """
    G = np.asarray(G, dtype=float)
    check_symmetric_traceless(G)
    return np.stack(
        [G[..., 0, 0], G[..., 0, 1], G[..., 0, 2], G[..., 1, 1], G[..., 1, 2]], axis=-1
    )


def unvdash(g) -> np.ndarray:
    g = np.asarray(g, dtype=float)
    xx, xy, xz, yy, yz = (g[..., i] for i in range(5))
    zz = -(xx + yy)
    return np.stack(
        [
            np.stack([xx, xy, xz], axis=-1),
            np.stack([xy, yy, yz], axis=-1),
            np.stack([xz, yz, zz], axis=-1),
        ],
        axis=-2,
    )


@dataclass(frozen=True)
class FieldSample:
    """Body-frame field (uT) and packed gradient (uT/m) at one instant."""

    B: np.ndarray
    g: np.ndarray
    t: float = 0.0

    @property
    def G(self) -> np.ndarray:
        return unvdash(self.g)


class InvariantTriple(NamedTuple):
    I1: float
    I2: float
    I3: float


def invariants(sample: FieldSample) -> InvariantTriple:
    G = sample.G
    return InvariantTriple(
        float(np.linalg.norm(sample.B)),
        float(np.linalg.norm(G, "fro")),
        float(np.linalg.det(G)),
    )


def invariant_streams(B, g) -> np.ndarray:
    """Vectorized invariants: B (K, 3), g (K, 5) -> (K, 3) columns I1, I2, I3."""
    B = np.asarray(B, dtype=float)
    G = unvdash(g)
    return np.column_stack(
        [
            np.linalg.norm(B, axis=1),
            np.sqrt(np.einsum("kij,kij->k", G, G)),
            np.linalg.det(G),
        ]
    )


def world_from_config(cfg: dict) -> MagWorld:
    """Build a world from a parsed ``[world]`` table.

    Recognized keys: ``background``, ``background_gradient`` (5 packed
    entries), ``exclusion_radius``, ``dipole_scale``, ``dipoles`` (list of
    tables with ``position`` and ``moment``), and ``random_dipoles`` (table
    with ``count``, ``seed``, ``x``, ``y``, ``z`` ranges and
    ``moment_range``), plus ``tile`` (table with ``period`` and ``copies``)
    that repeats every dipole along x to create look-alike field signatures.
    """
    pos, mom = [], []
    for d in cfg.get("dipoles", []):
        pos.append(d["position"])
        mom.append(d["moment"])
    rnd = cfg.get("random_dipoles")
    if rnd:
        rng = np.random.default_rng(rnd.get("seed", 0))
        n = int(rnd["count"])
        lo = np.array([rnd["x"][0], rnd["y"][0], rnd["z"][0]], dtype=float)
        hi = np.array([rnd["x"][1], rnd["y"][1], rnd["z"][1]], dtype=float)
        p = lo + (hi - lo) * rng.random((n, 3))
        direction = rng.normal(size=(n, 3))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        m_lo, m_hi = rnd.get("moment_range", [50.0, 300.0])
        mag = m_lo + (m_hi - m_lo) * rng.random(n)
        pos.extend(p.tolist())
        mom.extend((direction * mag[:, None]).tolist())
    pos = np.array(pos, dtype=float).reshape(-1, 3)
    mom = np.array(mom, dtype=float).reshape(-1, 3)
    tile = cfg.get("tile")
    if tile:
        period = float(tile["period"])
        copies = int(tile["copies"])
        shifts = np.arange(copies)[:, None] * np.array([period, 0.0, 0.0])
        pos = (pos[None, :, :] + shifts[:, None, :]).reshape(-1, 3)
        mom = np.tile(mom, (copies, 1))
    G0 = unvdash(cfg.get("background_gradient", [0.0] * 5))
    return MagWorld(
        background=np.array(cfg.get("background", [20.0, 0.0, 45.0]), dtype=float),
        dipole_positions=pos,
        dipole_moments=mom,
        background_gradient=G0,
        exclusion_radius=float(cfg.get("exclusion_radius", 0.3)),
        dipole_scale=float(cfg.get("dipole_scale", MU0_OVER_4PI)),
    )
