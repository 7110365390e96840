"""Simulation and estimation pipelines on top of the library modules.

``simulate`` turns a world/trajectory/sensor config into a :class:`Dataset`.
``estimate`` runs keyframing, preprocessing, the no-loop solve, loop
detection and gating, and the warm-started re-solve.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import loopclosure as lc
from .errors import ConfigError, DataError
from .geometry import Pose2, rot_z
from .io import Dataset
from .magnetostatics import invariant_streams, world_from_config
from .metrics import evaluate
from .residuals import ResidualBlock
from .sensors import (
    GyroModel,
    MagArrayModel,
    WheelModel,
    dead_reckon,
    planar_pose_3d,
    preintegrate_all,
    recover_gradient,
    simulate_array,
    simulate_gyro,
    simulate_wheel,
)
from .solver import EstimationProblem, Information, SolverSettings, build_initial_guess, solve_arrays
from .trajectory import Trajectory
from .trajectory import from_config as trajectory_from_config

log = logging.getLogger(__name__)


# --- configuration --------------------------------------------------------------


@dataclass(frozen=True)
class SensorConfig:
    gyro_rate: float = 50.0
    gyro_noise: float = 0.02  # rad/sqrt(s)
    gyro_bias: float = 0.0  # rad/s
    mag_rate: float = 25.0
    array_baseline: float = 0.4  # m
    mag_noise: float = 0.1  # uT per axis
    wheel: bool = True
    wheel_rate: float = 50.0
    wheel_scale_std: float = 0.03
    wheel_noise: float = 0.02  # m/s


@dataclass(frozen=True)
class LoopConfig:
    enabled: bool = True
    tau: float = 0.05
    min_sep: int = 40
    window: int = 10
    alpha: float = 0.05


@dataclass(frozen=True)
class EstimatorConfig:
    keyframe_rate: float = 5.0
    sigma_cd: float = 0.5  # uT
    sigma_fd: float = 5.0  # uT
    sigma_slip: float = 1e-4  # m
    sigma_loop: float = 3.5  # m
    gyro_noise: float = 0.13  # rad/sqrt(s), Q = gyro_noise**2
    prior_sigma: tuple = (1e-3, 1e-3, 1e-3)  # phi (rad), x, y (m)
    prior_mean: tuple | None = None  # (x, y, theta); default: first truth pose, else origin
    initial_speed: float = 0.0  # m/s, nominal speed for the initial guess
    use_fd: bool = True
    use_cd: bool = True
    use_slip: bool = True
    loops: LoopConfig = LoopConfig()
    solver: SolverSettings = SolverSettings()

    def dropping(self, term: str) -> "EstimatorConfig":
        return replace(self, **{f"use_{term}": False})


def _build(cls, cfg: dict | None, section: str, nested=None):
    cfg = dict(cfg or {})
    nested = nested or {}
    known = set(cls.__dataclass_fields__)
    unknown = set(cfg) - known
    if unknown:
        raise ConfigError(f"[{section}]: unknown keys {sorted(unknown)}")
    kw = {}
    for k, v in cfg.items():
        if k in nested:
            kw[k] = nested[k](v)
        elif isinstance(v, list):
            kw[k] = tuple(v)
        else:
            kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def sensor_config(cfg: dict) -> SensorConfig:
    return _build(SensorConfig, cfg.get("sensors"), "sensors")


def estimator_config(cfg: dict) -> EstimatorConfig:
    est = dict(cfg.get("estimator") or {})
    if "loops" in cfg:
        est.setdefault("loops", cfg["loops"])
    if "solver" in cfg:
        est.setdefault("solver", cfg["solver"])
    nested = {
        "loops": lambda d: _build(LoopConfig, d, "loops"),
        "solver": lambda d: _build(SolverSettings, d, "solver"),
    }
    return _build(EstimatorConfig, est, "estimator", nested)


# --- simulation -------------------------------------------------------------------


def simulate(cfg: dict, seed: int = 0, noise_free: bool = False) -> Dataset:
    """Simulate gyro, magnetometer-array, truth and (optionally) wheel streams."""
    try:
        world = world_from_config(cfg.get("world", {}))
        traj = trajectory_from_config(cfg.get("trajectory", {"preset": "lawnmower_revisit"}))
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid world/trajectory config: {exc}") from exc
    sc = sensor_config(cfg)
    rot = cfg.get("transform")
    if rot:
        world, traj = _apply_transform(world, traj, rot)
    if noise_free:
        sc = replace(sc, gyro_noise=0.0, gyro_bias=0.0, mag_noise=0.0, wheel_scale_std=0.0,
                     wheel_noise=0.0)
    s_gyro, s_mag, s_wheel = np.random.SeedSequence(seed).spawn(3)

    gyro = GyroModel(Q=sc.gyro_noise**2, rate=sc.gyro_rate, bias=sc.gyro_bias)
    t_gyro, u = simulate_gyro(traj, gyro, np.random.default_rng(s_gyro))

    array = MagArrayModel(baseline=sc.array_baseline, noise_std=sc.mag_noise, rate=sc.mag_rate)
    n_mag = int(np.floor(traj.duration * sc.mag_rate + 1e-9)) + 1
    t_mag = np.arange(n_mag) / sc.mag_rate
    x, y, th = traj.state(t_mag)
    C, r = planar_pose_3d(x, y, th)
    readings = simulate_array(world, C, r, array, np.random.default_rng(s_mag))

    wheel = None
    if sc.wheel:
        wm = WheelModel(sc.wheel_scale_std, sc.wheel_noise, sc.wheel_rate)
        t_w, v = simulate_wheel(traj, wm, np.random.default_rng(s_wheel))
        wheel = np.column_stack([t_w, v])

    meta = {"simulation": {"seed": int(seed), "noise_free": bool(noise_free)}}
    return Dataset(
        t_gyro, u, t_mag, readings=readings, truth=np.column_stack([t_mag, x, y, th]),
        wheel=wheel, baseline=sc.array_baseline, meta=meta,
    )


def _apply_transform(world, traj, rot):
    """Rigidly move world and trajectory together (planar yaw + shift)."""
    yaw = float(rot.get("yaw", 0.0))
    shift = np.array(list(rot.get("shift", [0.0, 0.0])) + [0.0], dtype=float)
    world = world.rotated(rot_z(yaw), shift)
    x0, y0, th0 = traj.start
    c, s = np.cos(yaw), np.sin(yaw)
    start = (c * x0 - s * y0 + shift[0], s * x0 + c * y0 + shift[1], th0 + yaw)
    return world, Trajectory(traj.segments, start)


# --- estimation -------------------------------------------------------------------


@dataclass
class Keyframes:
    t: np.ndarray
    B: np.ndarray
    g: np.ndarray
    dtheta: np.ndarray
    var: np.ndarray


@dataclass
class EstimateResult:
    t: np.ndarray
    theta: np.ndarray
    r: np.ndarray
    covariances: np.ndarray | None
    reports: list
    candidates: list = field(default_factory=list)
    accepted: list = field(default_factory=list)
    distance: lc.DistanceMatrix | None = None
    keyframes: Keyframes | None = None
    problem: EstimationProblem | None = None

    @property
    def report(self):
        return self.reports[-1]


def keyframes(ds: Dataset, est: EstimatorConfig, baseline: float | None = None) -> Keyframes:
    """Decimate the magnetometer stream to keyframes and preintegrate the gyro."""
    t_mag = np.asarray(ds.t_mag, dtype=float)
    if t_mag.size < 3:
        raise DataError("need at least three magnetometer samples")
    mag_rate = 1.0 / float(np.median(np.diff(t_mag)))
    step = int(round(mag_rate / est.keyframe_rate))
    if step < 1:
        raise ConfigError("keyframe rate exceeds the magnetometer rate")
    idx = np.arange(0, t_mag.size, step)
    if ds.readings is not None:
        b = baseline if baseline is not None else ds.baseline
        if b is None:
            raise ConfigError("raw readings need an array baseline (dataset.toml or config)")
        B, g = recover_gradient(ds.readings[idx], baseline=b)
    else:
        B, g = np.asarray(ds.B)[idx], np.asarray(ds.g)[idx]
    t_key = t_mag[idx]
    dtheta, var = preintegrate_all(ds.t_gyro, ds.u, t_key, est.gyro_noise**2)
    return Keyframes(t_key, B, g, dtheta, var)


def build_blocks(kf: Keyframes, est: EstimatorConfig, prior: Pose2):
    K = kf.t.shape[0]
    blocks = [ResidualBlock("prior", (0,), np.diag(np.square(est.prior_sigma)), prior)]
    R_fd = np.eye(3) * est.sigma_fd**2
    R_cd = np.eye(3) * est.sigma_cd**2
    R_slip = np.array([[est.sigma_slip**2]])
    for k in range(1, K):
        blocks.append(ResidualBlock("gyro", (k - 1, k), [[kf.var[k - 1]]], kf.dtheta[k - 1]))
        if est.use_fd:
            payload = {"B_a": kf.B[k - 1], "B_b": kf.B[k], "g_b": kf.g[k]}
            blocks.append(ResidualBlock("fd_mag", (k - 1, k), R_fd, payload))
        if est.use_slip:
            blocks.append(ResidualBlock("slip", (k - 1, k), R_slip))
        if est.use_cd and k + 1 < K:
            payload = {"B_a": kf.B[k - 1], "B_c": kf.B[k + 1], "g_b": kf.g[k]}
            blocks.append(ResidualBlock("cd_mag", (k - 1, k, k + 1), R_cd, payload))
    return blocks


def prior_pose(ds: Dataset, est: EstimatorConfig) -> Pose2:
    if est.prior_mean is not None:
        x, y, th = est.prior_mean
        return Pose2.from_xyt(x, y, th)
    if ds.truth is not None:
        _, x, y, th = ds.truth[0]
        return Pose2.from_xyt(x, y, th)
    return Pose2.identity()


def estimate(ds: Dataset, est: EstimatorConfig | None = None, with_loops=True,
             covariances=True, baseline=None, initial=None) -> EstimateResult:
    """Full pipeline. ``initial`` optionally overrides the initial guess (theta, r)."""
    est = est or EstimatorConfig()
    kf = keyframes(ds, est, baseline)
    prior = prior_pose(ds, est)
    blocks = build_blocks(kf, est, prior)
    if initial is None:
        dt = np.diff(kf.t)
        poses = build_initial_guess(kf.dtheta, prior, est.initial_speed, dt)
        problem = EstimationProblem(poses, blocks, est.solver)
    else:
        problem = EstimationProblem(initial, blocks, est.solver)
    theta, r, rep = solve_arrays(problem)
    reports = [rep]
    result = EstimateResult(kf.t, theta, r, None, reports, keyframes=kf)
    problem = problem.with_poses((theta, r))

    if with_loops and est.loops.enabled:
        info = Information(problem)
        D = lc.combined_distance(invariant_streams(kf.B, kf.g))
        cands = lc.extract_candidates(D, est.loops.tau, est.loops.min_sep, est.loops.window)
        poses = problem.poses
        accepted = lc.gate_candidates(cands, poses, info.relative, est.loops.alpha)
        result.candidates, result.accepted, result.distance = cands, accepted, D
        if accepted:
            Psi = np.eye(2) * est.sigma_loop**2
            loops = [ResidualBlock("loop", (c.i, c.j), Psi) for c in accepted]
            problem = problem.with_blocks(loops)
            theta, r, rep = solve_arrays(problem)
            reports.append(rep)
            problem = problem.with_poses((theta, r))
            result.theta, result.r = theta, r
    if covariances:
        result.covariances = Information(problem).pose_covariances()
    result.problem = problem
    return result


def dead_reckoning(ds: Dataset, t_out):
    """Wheel + gyro dead reckoning from the first truth pose (baseline only)."""
    if ds.wheel is None:
        raise DataError("dataset has no wheel odometry")
    start = ds.truth[0, 1:4] if ds.truth is not None else np.zeros(3)
    x, y, th = dead_reckon(ds.t_gyro, ds.u, ds.wheel[:, 0], ds.wheel[:, 1], start, t_out)
    return th, np.column_stack([x, y])


def score(ds: Dataset, res: EstimateResult, with_nees=False):
    if ds.truth is None:
        raise DataError("dataset has no ground truth")
    tr = ds.truth
    key_period = float(np.median(np.diff(res.t))) if res.t.size > 1 else 0.2
    cov = res.covariances if with_nees else None
    return evaluate(res.t, res.theta, res.r, tr[:, 0], tr[:, 3], tr[:, 1:3], cov, key_period)


ABLATIONS = ("fd", "cd", "slip")


def ablate(ds: Dataset, est: EstimatorConfig, with_loops=False):
    """Baseline plus one row per dropped term; RMSE change in percent."""
    rows = []
    base = score(ds, estimate(ds, est, with_loops, covariances=False))
    rows.append({"variant": "baseline", "position_rmse": base.position_rmse,
                 "attitude_rmse": base.attitude_rmse, "position_change_pct": 0.0,
                 "attitude_change_pct": 0.0})
    for term in ABLATIONS:
        m = score(ds, estimate(ds, est.dropping(term), with_loops, covariances=False))
        rows.append({
            "variant": f"drop-{term}",
            "position_rmse": m.position_rmse,
            "attitude_rmse": m.attitude_rmse,
            "position_change_pct": 100.0 * (m.position_rmse / base.position_rmse - 1.0),
            "attitude_change_pct": 100.0 * (m.attitude_rmse / base.attitude_rmse - 1.0),
        })
    return rows
