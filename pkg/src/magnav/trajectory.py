"""Ground-truth planar trajectories built from unicycle segments.

A trajectory is a chain of constant (speed, yaw rate) segments, so the pose
at any time has a closed form and sensor simulation never integrates
numerically.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import wrap_angle


@dataclass(frozen=True)
class Segment:
    speed: float  # m/s, body-x
    yaw_rate: float  # rad/s
    duration: float  # s


def _sinc(x):
    return np.sinc(np.asarray(x) / np.pi)


def _advance(x, y, th, v, w, tau):
    """Closed-form unicycle step; exact for constant v and w."""
    half = 0.5 * w * tau
    dist = v * tau * _sinc(half)
    return x + dist * np.cos(th + half), y + dist * np.sin(th + half), th + w * tau


class Trajectory:
    def __init__(self, segments, start=(0.0, 0.0, 0.0)):
        self.segments = list(segments)
        if not self.segments:
            raise ValueError("trajectory needs at least one segment")
        self.start = tuple(float(v) for v in start)
        n = len(self.segments)
        self._t0 = np.zeros(n)
        self._x0 = np.zeros((n, 3))
        t, state = 0.0, np.array(self.start)
        for k, seg in enumerate(self.segments):
            self._t0[k] = t
            self._x0[k] = state
            state = np.array(_advance(*state, seg.speed, seg.yaw_rate, seg.duration))
            t += seg.duration
        self.duration = t
        self._v = np.array([s.speed for s in self.segments])
        self._w = np.array([s.yaw_rate for s in self.segments])

    def _locate(self, t):
        t = np.asarray(t, dtype=float)
        k = np.searchsorted(self._t0, t, side="right") - 1
        return np.clip(k, 0, len(self.segments) - 1), t

    def unwrapped_heading(self, t):
        k, t = self._locate(t)
        return self._x0[k, 2] + self._w[k] * (t - self._t0[k])

    def state(self, t):
        """Return (x, y, theta) arrays at times ``t``; theta wrapped."""
        k, t = self._locate(t)
        x, y, th = _advance(
            self._x0[k, 0], self._x0[k, 1], self._x0[k, 2], self._v[k], self._w[k],
            t - self._t0[k],
        )
        return x, y, wrap_angle(th)

    def speed(self, t):
        k, _ = self._locate(t)
        return self._v[k]

    def yaw_rate(self, t):
        k, _ = self._locate(t)
        return self._w[k]

    def distance(self, t):
        """Path length travelled since the start."""
        k, t = self._locate(t)
        lengths = np.concatenate([[0.0], np.cumsum(self._v * np.diff(np.append(self._t0, self.duration)))])
        return lengths[k] + self._v[k] * (t - self._t0[k])


def path_segments(primitives, speed):
    """Turn ('straight', length) / ('arc', radius, angle) primitives into segments.

    Positive arc angles turn left (counter-clockwise).
    """
    segs = []
    for prim in primitives:
        kind = prim[0]
        if kind == "straight":
            segs.append(Segment(speed, 0.0, float(prim[1]) / speed))
        elif kind == "arc":
            radius, angle = float(prim[1]), float(prim[2])
            dur = abs(angle) * radius / speed
            segs.append(Segment(speed, np.sign(angle) * speed / radius, dur))
        elif kind == "pause":
            segs.append(Segment(0.0, 0.0, float(prim[1])))
        elif kind == "spin":
            # turn in place: angle (rad) over duration (s)
            segs.append(Segment(0.0, float(prim[1]) / float(prim[2]), float(prim[2])))
        else:
            raise ValueError(f"unknown path primitive {kind!r}")
    return segs


def lawnmower_revisit(speed=0.5):
    """Demo path: lawnmower rows with a single planted revisit.

    Rows end in turns on the spot, which a skid-steer robot does and which
    keep the no-side-slip constraint exact. The robot passes P = (10, 0)
    heading east at t = 20 s, sweeps two rows, and comes back to P with the
    same heading at t = 80 s on a quarter-circle that only kisses the first
    row, then leaves on a mirrored quarter-circle and finishes on a
    westbound row 4.5 m north of the first one. The two visits therefore
    share one pose instead of an overlapping segment; at 5 Hz keyframes
    that is the pair (100, 400). Total duration 120 s.

    Durations scale with 1/speed for the straight parts only, so the
    timing above holds for the default speed of 0.5 m/s.
    """
    pi = np.pi
    radius = 1.5
    # the first loop must take 60 s; solve for the length of the east leg
    arc_time = radius * (pi / 2) / speed
    fixed = 3 * 2.0 + 6.0 / speed + arc_time
    east = (60.0 - fixed) * speed / 2.0
    prims = [
        ("straight", 20.0 * speed),  # -> P at t = 20 s
        ("straight", east),
        ("spin", -pi / 2, 2.0),
        ("straight", 3.0),
        ("spin", -pi / 2, 2.0),
        ("straight", east + radius),
        ("spin", -pi / 2, 2.0),
        ("straight", 3.0 - radius),
        ("arc", radius, -pi / 2),  # back at P heading east, t = 80 s
        ("arc", radius, pi / 2),
        ("straight", 3.0),
        ("spin", pi / 2, 2.0),
    ]
    segs = path_segments(prims, speed)
    used = sum(sg.duration for sg in segs)
    segs += path_segments([("straight", max(120.0 - used, 0.0) * speed)], speed)
    return Trajectory(segs, start=(-20.0 * speed + 10.0, 0.0, 0.0))


def from_config(cfg: dict) -> Trajectory:
    """Build from a ``[trajectory]`` table.

    Either ``preset = "lawnmower_revisit"`` (with optional ``speed``) or an
    explicit ``primitives`` list plus ``speed`` and ``start = [x, y, theta]``.
    """
    speed = float(cfg.get("speed", 0.5))
    preset = cfg.get("preset")
    if preset == "lawnmower_revisit":
        return lawnmower_revisit(speed)
    if preset is not None:
        raise ValueError(f"unknown trajectory preset {preset!r}")
    prims = [tuple(p) for p in cfg["primitives"]]
    return Trajectory(path_segments(prims, speed), start=cfg.get("start", (0.0, 0.0, 0.0)))
