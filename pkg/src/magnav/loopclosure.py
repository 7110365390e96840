"""Map-free loop-closure detection from attitude-invariant field scalars.

Each keyframe stores three rotation-invariant scalars of the measured field
and gradient. Places that look alike give small entries in the pairwise
distance matrix; those become candidates, and a chi-square test on the
relative pose of the no-loop solution rejects the physically impossible
ones.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2

from . import _kernels
from .errors import AllInvariantsConstant, SingularRelativeCovariance
from .geometry import Pose2, se2_log

log = logging.getLogger(__name__)

LABELS = ("I1", "I2", "I3")


@dataclass(frozen=True)
class DistanceMatrix:
    values: np.ndarray
    label: str

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("distance matrix must be square")
        object.__setattr__(self, "values", v)

    @property
    def size(self) -> int:
        return self.values.shape[0]

    def log_scaled(self, floor=1e-12) -> np.ndarray:
        """log10 of the entries, floored so the zero diagonal stays finite."""
        return np.log10(np.maximum(self.values, floor))


@dataclass
class LoopCandidate:
    i: int
    j: int
    score: float
    statistic: float = float("nan")
    accepted: bool = False


def distance_matrix(stream, label="I") -> DistanceMatrix:
    """``|I_k - I_l|`` for one invariant stream."""
    x = np.asarray(stream, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("need at least two samples")
    return DistanceMatrix(_kernels.abs_diff_matrix(np.ascontiguousarray(x)), label)


def combined_distance(streams) -> DistanceMatrix:
    """Sum of per-invariant distances, each divided by its stream's max |I|.

    ``streams`` is (K, 3) or a sequence of three length-K streams. A stream
    whose max is zero contributes nothing.
    """
    S = np.asarray(streams, dtype=float)
    if S.ndim != 2:
        raise ValueError("streams must be two-dimensional")
    if S.shape[0] == 3 and S.shape[1] != 3:
        S = S.T
    K = S.shape[0]
    if K < 2:
        raise ValueError("need at least two samples")
    scale = np.max(np.abs(S), axis=0)
    if not np.any(scale > 0):
        raise AllInvariantsConstant("every invariant stream is identically zero")
    D = np.zeros((K, K))
    for b in range(S.shape[1]):
        if scale[b] > 0:
            D += distance_matrix(S[:, b], LABELS[b % 3]).values / scale[b]
    return DistanceMatrix(D, "combined")


def extract_candidates(D, tau=0.05, min_sep=40, window=10) -> list[LoopCandidate]:
    """Upper-triangle window minima of ``D`` below ``tau``.

    A pair (i, j) qualifies when ``j - i >= min_sep``, ``D[i, j] < tau`` and
    no other qualifying-separation entry in the surrounding
    ``(2*(window//2)+1)``-square is smaller. Ties go to the lexicographically
    smallest (i, j), so a flat valley yields one candidate.
    """
    if min_sep < 1:
        raise ValueError("min_sep must be at least 1")
    if window < 1:
        raise ValueError("window must be at least 1")
    vals = D.values if isinstance(D, DistanceMatrix) else np.asarray(D, dtype=float)
    if not tau > 0:
        return []
    ii, jj = _kernels.local_minima(vals, tau, min_sep, window)
    return [LoopCandidate(int(i), int(j), float(vals[i, j])) for i, j in zip(ii, jj)]


def chi2_threshold(dof=3, alpha=0.05) -> float:
    """Upper ``alpha`` quantile of the chi-square distribution."""
    return float(chi2.ppf(1.0 - alpha, dof))


def gate_statistic(Ti: Pose2, Tj: Pose2, cov) -> float:
    """Squared Mahalanobis length of ``log(T_i^-1 T_j)``."""
    xi = se2_log(Ti.inverse() @ Tj)
    try:
        L = np.linalg.cholesky(np.asarray(cov, dtype=float))
    except np.linalg.LinAlgError as exc:
        raise SingularRelativeCovariance(str(exc)) from exc
    z = np.linalg.solve(L, xi)
    return float(z @ z)


def gate_candidates(candidates, poses, relative_cov, alpha=0.05) -> list[LoopCandidate]:
    """Fill in gate statistics and return the accepted candidates.

    ``relative_cov(i, j)`` returns the 3x3 covariance of the relative pose,
    for example :meth:`magnav.solver.Information.relative`.
    """
    thr = chi2_threshold(3, alpha)
    accepted = []
    for c in candidates:
        try:
            c.statistic = gate_statistic(poses[c.i], poses[c.j], relative_cov(c.i, c.j))
        except SingularRelativeCovariance as exc:
            log.warning("rejecting candidate (%d, %d): %s", c.i, c.j, exc)
            c.statistic, c.accepted = float("inf"), False
            continue
        c.accepted = c.statistic <= thr
        if c.accepted:
            accepted.append(c)
    return accepted


__all__ = [
    "DistanceMatrix",
    "LoopCandidate",
    "chi2_threshold",
    "combined_distance",
    "distance_matrix",
    "extract_candidates",
    "gate_candidates",
    "gate_statistic",
]
