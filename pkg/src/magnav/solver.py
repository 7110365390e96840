"""Batch on-manifold weighted least squares over a planar pose trajectory.

The cost is ``1/2 sum_k e_k^T S_k^-1 e_k`` over all residual blocks. Each
block is whitened by the inverse Cholesky factor of its covariance, the
stacked Jacobian is assembled sparse, and the normal equations
``H delta = -J^T e`` are solved with a sparse LU (symmetric mode, fill
reducing ordering). Updates are right perturbations, see
:func:`magnav.geometry.retract`.

Every accepted step lowers (or keeps) the cost: a Gauss-Newton step is
tried first, then halved a few times, then replaced by Levenberg-Marquardt
steps whose diagonal damping persists across iterations. After each trial
step the positions are re-solved exactly for the trial headings (the cost
is linear in positions once headings are fixed), which keeps the stiff
non-holonomic terms satisfied while headings move.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components
from scipy.sparse.linalg import splu

from . import _kernels
from .errors import NonFiniteCost, SingularInformation, SingularNormalEquations
from .geometry import (
    Pose2,
    arrays_to_poses,
    poses_to_arrays,
    retract,
    se2_left_jacobian,
    se2_log,
    se2_right_jacobian,
    wrap_angle,
)
from .magnetostatics import unvdash
from .residuals import ResidualBlock, prior_error

log = logging.getLogger(__name__)

# pivot / diagonal ratio below which a pivot counts as zero. Weakly but
# genuinely constrained poses can sit near 1e-10 (tight slip weights next to
# faint gradients), so this only catches roundoff-level pivots; gauge
# freedom is found structurally by _check_structure.
PIVOT_RTOL = 1e-14


@dataclass(frozen=True)
class SolverSettings:
    max_iterations: int = 100
    step_tol: float = 1e-8
    cost_tol: float = 1e-10
    max_backtracks: int = 4
    initial_damping: float = 1e-6
    damping_factor: float = 10.0
    max_damping: float = 1e8
    project_positions: bool = True

    @classmethod
    def from_config(cls, cfg: dict | None) -> "SolverSettings":
        cfg = dict(cfg or {})
        known = set(cls.__dataclass_fields__)
        unknown = set(cfg) - known
        if unknown:
            raise ValueError(f"unknown solver settings: {sorted(unknown)}")
        return cls(**cfg)


@dataclass
class SolveReport:
    iterations: int
    initial_cost: float
    final_cost: float
    reason: str
    cost_trace: list = field(default_factory=list)
    damped_steps: int = 0
    seconds: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


class EstimationProblem:
    """Poses (initial guess) plus residual blocks plus solver settings.

    With ``strict`` (the default) the structural rules are enforced: one
    prior block, gyro/fd_mag/slip blocks on consecutive keyframes
    ``(k-1, k)``, cd_mag blocks on ``(k-1, k, k+1)``. ``strict=False`` only
    checks index ranges, which is how gauge-freedom experiments drop the
    prior.
    """

    def __init__(self, poses, blocks, settings: SolverSettings | None = None, strict=True):
        if isinstance(poses, tuple) and len(poses) == 2 and isinstance(poses[0], np.ndarray):
            theta, r = poses
        else:
            theta, r = poses_to_arrays(list(poses))
        self.theta = np.asarray(theta, dtype=float).copy()
        self.r = np.asarray(r, dtype=float).reshape(-1, 2).copy()
        self.blocks = list(blocks)
        self.settings = settings or SolverSettings()
        self.strict = strict
        self._validate()
        self._groups = _compile(self.blocks)

    @property
    def n_poses(self) -> int:
        return self.theta.shape[0]

    @property
    def poses(self) -> list[Pose2]:
        return arrays_to_poses(self.theta, self.r)

    def _validate(self):
        K = self.n_poses
        if K == 0:
            raise ValueError("problem needs at least one pose")
        n_prior = 0
        for blk in self.blocks:
            if not isinstance(blk, ResidualBlock):
                raise TypeError("blocks must be ResidualBlock instances")
            if min(blk.indices) < 0 or max(blk.indices) >= K:
                raise ValueError(f"{blk.kind} block indices {blk.indices} out of range 0..{K - 1}")
            if blk.kind == "prior":
                n_prior += 1
            if not self.strict:
                continue
            i = blk.indices
            if blk.kind in ("gyro", "fd_mag", "slip") and i[1] != i[0] + 1:
                raise ValueError(f"{blk.kind} block must join consecutive keyframes, got {i}")
            if blk.kind == "cd_mag" and not (i[1] == i[0] + 1 and i[2] == i[1] + 1):
                raise ValueError(f"cd_mag block must join three consecutive keyframes, got {i}")
        if self.strict and n_prior != 1:
            raise ValueError(f"problem needs exactly one prior block, got {n_prior}")

    def with_poses(self, poses) -> "EstimationProblem":
        return EstimationProblem(poses, self.blocks, self.settings, self.strict)

    def with_blocks(self, extra) -> "EstimationProblem":
        return EstimationProblem(
            (self.theta, self.r), self.blocks + list(extra), self.settings, self.strict
        )

    def cost(self, theta=None, r=None) -> float:
        theta = self.theta if theta is None else theta
        r = self.r if r is None else r
        e = _residuals(self._groups, theta, r)
        return 0.5 * float(e @ e)

    def linearize(self, theta=None, r=None):
        """Whitened residual vector and sparse Jacobian (CSR)."""
        theta = self.theta if theta is None else theta
        r = self.r if r is None else r
        return _linearize(self._groups, theta, r, self.n_poses)


# --- block compilation -----------------------------------------------------


@dataclass
class _Group:
    kind: str
    idx: np.ndarray  # (n, m) pose indices
    W: np.ndarray  # (n, d, d) whitening, W^T W = S^-1
    data: dict


def _whiteners(covs):
    L = np.linalg.cholesky(covs)
    eye = np.broadcast_to(np.eye(covs.shape[-1]), covs.shape)
    return np.linalg.solve(L, eye)


def _compile(blocks):
    by_kind: dict[str, list[ResidualBlock]] = {}
    for blk in blocks:
        by_kind.setdefault(blk.kind, []).append(blk)
    groups = []
    for kind, blks in by_kind.items():
        idx = np.array([b.indices for b in blks], dtype=np.int64)
        W = _whiteners(np.stack([b.cov for b in blks]))
        data = {}
        if kind == "prior":
            data["prior"] = [b.payload for b in blks]
        elif kind == "gyro":
            data["dtheta"] = np.array([float(b.payload) for b in blks])
        elif kind == "fd_mag":
            data["Ba"] = np.array([b.payload["B_a"] for b in blks], dtype=float)
            data["Bb"] = np.array([b.payload["B_b"] for b in blks], dtype=float)
            data["Gb"] = unvdash(np.array([b.payload["g_b"] for b in blks], dtype=float))
        elif kind == "cd_mag":
            data["Ba"] = np.array([b.payload["B_a"] for b in blks], dtype=float)
            data["Bc"] = np.array([b.payload["B_c"] for b in blks], dtype=float)
            data["Gb"] = unvdash(np.array([b.payload["g_b"] for b in blks], dtype=float))
        groups.append(_Group(kind, idx, W, data))
    return groups


def _eval_group(g: _Group, theta, r, jacobian):
    """Raw residuals (n, d) and Jacobians (n, d, 3m) of one group."""
    idx = g.idx
    n = idx.shape[0]
    if g.kind == "prior":
        res = np.empty((n, 3))
        J = np.empty((n, 3, 3))
        for k, (i,) in enumerate(idx):
            res[k], J[k] = prior_error(Pose2.from_xyt(r[i, 0], r[i, 1], theta[i]), g.data["prior"][k], True)
        return res, J
    if g.kind == "gyro":
        res = wrap_angle(theta[idx[:, 0]] + g.data["dtheta"] - theta[idx[:, 1]])[:, None]
        J = np.zeros((n, 1, 6))
        J[:, 0, 0] = 1.0
        J[:, 0, 3] = -1.0
        return res, J
    if g.kind == "fd_mag":
        return _kernels.fd_blocks(theta, r, idx[:, 0], idx[:, 1], g.data["Ba"], g.data["Bb"], g.data["Gb"])
    if g.kind == "cd_mag":
        return _kernels.cd_blocks(
            theta, r, idx[:, 0], idx[:, 1], idx[:, 2], g.data["Ba"], g.data["Bc"], g.data["Gb"]
        )
    if g.kind == "slip":
        res, J = _kernels.slip_blocks(theta, r, idx[:, 0], idx[:, 1])
        return res[:, None], J
    # loop: r_j - r_i
    i, j = idx[:, 0], idx[:, 1]
    res = r[j] - r[i]
    J = np.zeros((n, 2, 6))
    ci, si = np.cos(theta[i]), np.sin(theta[i])
    cj, sj = np.cos(theta[j]), np.sin(theta[j])
    J[:, 0, 1], J[:, 0, 2], J[:, 1, 1], J[:, 1, 2] = -ci, si, -si, -ci
    J[:, 0, 4], J[:, 0, 5], J[:, 1, 4], J[:, 1, 5] = cj, -sj, sj, cj
    return res, J


def _residuals(groups, theta, r):
    parts = []
    for g in groups:
        res, _ = _eval_group(g, theta, r, False)
        parts.append(np.einsum("nij,nj->ni", g.W, res).ravel())
    return np.concatenate(parts) if parts else np.zeros(0)


def _linearize(groups, theta, r, K):
    es, rows, cols, vals = [], [], [], []
    row0 = 0
    for g in groups:
        res, J = _eval_group(g, theta, r, True)
        n, d = res.shape
        m = g.idx.shape[1]
        es.append(np.einsum("nij,nj->ni", g.W, res).ravel())
        Jw = np.einsum("nij,njk->nik", g.W, J)
        rr = row0 + np.arange(n * d).reshape(n, d, 1)
        cc = (3 * g.idx[:, :, None] + np.arange(3)).reshape(n, 1, 3 * m)
        rows.append(np.broadcast_to(rr, Jw.shape).ravel())
        cols.append(np.broadcast_to(cc, Jw.shape).ravel())
        vals.append(Jw.ravel())
        row0 += n * d
    e = np.concatenate(es)
    J = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(row0, 3 * K)
    )
    return e, J


# --- factorization ---------------------------------------------------------


def _factor(H, error_cls=SingularNormalEquations):
    """Sparse LU of the (symmetric) normal matrix with a zero-pivot check."""
    H = sp.csc_matrix(H)
    diag = H.diagonal()
    if np.any(diag <= 0):
        v = int(np.argmax(diag <= 0))
        raise error_cls(f"pose {v // 3} is unconstrained (zero diagonal)", pose_index=v // 3)
    try:
        lu = _splu(H)
    except RuntimeError as exc:
        # exactly singular: a tiny relative shift lets the factorization
        # finish so the pivot check below can name the free pose
        lu = None
        try:
            shifted = _splu(H + sp.diags(diag * PIVOT_RTOL * 1e-3))
        except RuntimeError:
            raise error_cls(f"normal equations are singular: {exc}") from exc
    else:
        shifted = lu
    piv = np.abs(shifted.U.diagonal())
    # perm_c[v] is the elimination position of variable v; invert it
    var = np.argsort(shifted.perm_c)
    ratio = piv / diag[var]
    bad = np.nonzero(~(ratio > PIVOT_RTOL))[0]
    if bad.size:
        v = int(var[bad[0]])
        raise error_cls(
            f"normal equations are singular; pose {v // 3} is not constrained "
            f"(pivot ratio {ratio[bad[0]]:.2e})",
            pose_index=v // 3,
        )
    if lu is None:
        raise error_cls("normal equations are singular")
    return lu


def _splu(H):
    return splu(
        H,
        permc_spec="MMD_AT_PLUS_A",
        diag_pivot_thresh=0.0,
        options={"SymmetricMode": True},
    )


class _SingularInfo(SingularInformation):
    def __init__(self, message, pose_index=None):
        super().__init__(message)
        self.pose_index = pose_index


# --- solve ------------------------------------------------------------------


def solve(problem: EstimationProblem):
    """Minimize the problem cost from its stored poses.

    Returns ``(poses, report)`` where ``poses`` is a list of :class:`Pose2`.
    Use :func:`solve_arrays` to get (theta, r) arrays instead.
    """
    theta, r, report = solve_arrays(problem)
    return arrays_to_poses(theta, r), report


def _check_structure(problem: EstimationProblem):
    """Raise if some pose is untouched or a group of poses has no prior.

    Every term except the prior is relative, so a connected set of poses
    without a prior block can slide rigidly: the normal equations are
    singular however well the rest is measured.
    """
    K = problem.n_poses
    touched = np.zeros(K, dtype=bool)
    anchored = np.zeros(K, dtype=bool)
    rows, cols = [], []
    for blk in problem.blocks:
        idx = blk.indices
        touched[list(idx)] = True
        if blk.kind == "prior":
            anchored[idx[0]] = True
        for a, b in zip(idx[:-1], idx[1:]):
            rows.append(a)
            cols.append(b)
    if not touched.all():
        k = int(np.argmin(touched))
        raise SingularNormalEquations(f"pose {k} appears in no residual block", pose_index=k)
    adj = sp.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(K, K))
    n_comp, label = connected_components(adj, directed=False)
    for c in range(n_comp):
        members = label == c
        if not anchored[members].any():
            k = int(np.argmax(members))
            raise SingularNormalEquations(
                f"normal equations are singular: poses from {k} on have no prior "
                "(global position and heading unobservable)",
                pose_index=k,
            )


def _project_positions(problem, theta, r):
    """Exact least-squares positions for fixed headings.

    Every residual kind is linear in the positions once the headings are
    fixed (prior translation included, since its heading part is then
    constant), so one Gauss-Newton step over the position columns alone
    lands on the minimiser.
    """
    K = problem.n_poses
    e, J = problem.linearize(theta, r)
    cols = np.arange(3 * K).reshape(K, 3)[:, 1:].ravel()
    Jr = J[:, cols]
    JT = Jr.T.tocsr()
    rho = -_factor((JT @ Jr).tocsc()).solve(JT @ e)
    delta = np.zeros((K, 3))
    delta[:, 1:] = rho.reshape(K, 2)
    return retract(theta, r, delta)


def solve_arrays(problem: EstimationProblem):
    s = problem.settings
    _check_structure(problem)
    t0 = time.perf_counter()
    theta, r = problem.theta.copy(), problem.r.copy()
    K = problem.n_poses
    e, J = problem.linearize(theta, r)
    cost = 0.5 * float(e @ e)
    if not np.isfinite(cost):
        raise NonFiniteCost(f"initial cost is not finite ({cost})")
    report = SolveReport(0, cost, cost, "max_iterations", [cost])
    lam = 0.0  # damping carried across iterations once LM has been needed

    def trial(step):
        th_new, r_new = retract(theta, r, step.reshape(K, 3))
        if s.project_positions:
            th_new, r_new = _project_positions(problem, th_new, r_new)
        new = problem.cost(th_new, r_new)
        if np.isfinite(new) and new <= cost:
            return th_new, r_new, new
        return None

    for _ in range(s.max_iterations):
        JT = J.T.tocsr()
        H = (JT @ J).tocsc()
        grad = JT @ e
        accepted = None
        if lam == 0.0:
            delta = -_factor(H).solve(grad)
            if np.max(np.abs(delta)) < s.step_tol:
                report.reason = "step_tol"
                break
            alpha = 1.0
            for _ in range(s.max_backtracks + 1):
                accepted = trial(alpha * delta)
                if accepted is not None:
                    break
                alpha *= 0.5
            if accepted is None:
                lam = s.initial_damping

        if accepted is None:
            D = sp.diags(H.diagonal())
            while lam <= s.max_damping:
                step = -_factor(H + lam * D).solve(grad)
                report.damped_steps += 1
                accepted = trial(step)
                if accepted is not None:
                    # relax after a success; back to plain Gauss-Newton once
                    # the damping has fallen below its starting value
                    lam /= s.damping_factor
                    if lam < s.initial_damping:
                        lam = 0.0
                    break
                lam *= s.damping_factor
        if accepted is None:
            report.reason = "no_decrease"
            break

        theta, r, new = accepted
        report.iterations += 1
        report.cost_trace.append(new)
        decrease = cost - new
        prev, cost = cost, new
        if prev == 0.0 or decrease <= s.cost_tol * prev:
            report.reason = "cost_tol"
            break
        e, J = problem.linearize(theta, r)

    report.final_cost = cost
    report.seconds = time.perf_counter() - t0
    log.debug("solve: %d iterations, cost %.3e -> %.3e (%s)", report.iterations,
              report.initial_cost, report.final_cost, report.reason)
    return theta, r, report


def build_initial_guess(dtheta, prior: Pose2, speed=0.0, dt=None):
    """Dead-reckoned starting trajectory from preintegrated gyro increments.

    Headings accumulate ``dtheta`` from the prior heading. Positions advance
    at the nominal forward ``speed`` along the mid-interval heading; with
    the default speed of 0 every position sits at the prior position and
    the magnetic terms (linear in position for fixed headings) pull them
    apart on the first iteration.
    """
    dtheta = np.asarray(dtheta, dtype=float)
    K = dtheta.shape[0] + 1
    theta_u = prior.theta + np.concatenate([[0.0], np.cumsum(dtheta)])
    r = np.tile(prior.r, (K, 1))
    if speed and K > 1:
        if dt is None:
            raise ValueError("dt is needed when speed is nonzero")
        dt = np.broadcast_to(np.asarray(dt, dtype=float), dtheta.shape)
        mid = 0.5 * (theta_u[:-1] + theta_u[1:])
        step = speed * dt
        steps = np.column_stack([step * np.cos(mid), step * np.sin(mid)])
        r = r + np.vstack([np.zeros(2), np.cumsum(steps, axis=0)])
    return arrays_to_poses(wrap_angle(theta_u), r)


# --- covariance -------------------------------------------------------------


class Information:
    """Factorized Gauss-Newton information matrix at a linearization point."""

    def __init__(self, problem: EstimationProblem, theta=None, r=None):
        theta = problem.theta if theta is None else np.asarray(theta, dtype=float)
        r = problem.r if r is None else np.asarray(r, dtype=float)
        self.theta, self.r = theta, r
        self.n_poses = problem.n_poses
        _, J = problem.linearize(theta, r)
        self.lu = _factor((J.T @ J).tocsc(), error_cls=_SingularInfo)

    def columns(self, var_idx):
        n = 3 * self.n_poses
        E = np.zeros((n, len(var_idx)))
        E[np.asarray(var_idx), np.arange(len(var_idx))] = 1.0
        return self.lu.solve(E)

    def marginal(self, i, j=None) -> np.ndarray:
        idx = [3 * i, 3 * i + 1, 3 * i + 2]
        if j is not None:
            idx += [3 * j, 3 * j + 1, 3 * j + 2]
        cols = self.columns(idx)
        S = cols[idx]
        return 0.5 * (S + S.T)

    def relative(self, i, j) -> np.ndarray:
        Ti = Pose2.from_xyt(self.r[i, 0], self.r[i, 1], self.theta[i])
        Tj = Pose2.from_xyt(self.r[j, 0], self.r[j, 1], self.theta[j])
        xi = se2_log(Ti.inverse() @ Tj)
        A = np.hstack([-np.linalg.inv(se2_left_jacobian(xi)), np.linalg.inv(se2_right_jacobian(xi))])
        S = A @ self.marginal(i, j) @ A.T
        return 0.5 * (S + S.T)

    def pose_covariances(self, chunk=300) -> np.ndarray:
        """All 3x3 diagonal blocks of the covariance, shape (K, 3, 3)."""
        K = self.n_poses
        out = np.empty((K, 3, 3))
        for start in range(0, K, chunk):
            stop = min(K, start + chunk)
            idx = np.arange(3 * start, 3 * stop)
            cols = self.columns(idx)
            for k in range(start, stop):
                c = 3 * (k - start)
                blk = cols[3 * k:3 * k + 3, c:c + 3]
                out[k] = 0.5 * (blk + blk.T)
        return out


def marginal_covariance(problem: EstimationProblem, i, j=None, poses=None, info=None):
    """Joint covariance of poses ``i`` and ``j`` (6x6), or of ``i`` alone (3x3)."""
    info = info or _info_for(problem, poses)
    return info.marginal(i, j)


def relative_covariance(problem: EstimationProblem, i, j, poses=None, info=None):
    """Covariance of ``log(T_i^-1 T_j)`` by first-order propagation (3x3)."""
    info = info or _info_for(problem, poses)
    return info.relative(i, j)


def _info_for(problem, poses):
    if poses is None:
        return Information(problem)
    theta, r = poses_to_arrays(list(poses)) if not isinstance(poses, tuple) else poses
    return Information(problem, theta, r)


__all__ = [
    "EstimationProblem",
    "Information",
    "SolveReport",
    "SolverSettings",
    "build_initial_guess",
    "marginal_covariance",
    "relative_covariance",
    "solve",
    "solve_arrays",
]
