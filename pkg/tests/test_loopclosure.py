import logging

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from magnav import _kernels
from magnav import loopclosure as lc
from magnav.errors import AllInvariantsConstant
from magnav.geometry import Pose2, se2_exp

# chi-square(3) quantiles from the closed-form CDF
# erf(sqrt(x/2)) - sqrt(2x/pi) exp(-x/2), inverted by bisection
CHI2_3_095 = 7.814727903251173


def test_distance_matrix_examples():
    D = lc.distance_matrix(np.full(6, 3.7), "I1")
    assert D.label == "I1" and np.array_equal(D.values, np.zeros((6, 6)))
    D = lc.distance_matrix([1.0, 3.0])
    np.testing.assert_array_equal(D.values, [[0.0, 2.0], [2.0, 0.0]])
    with pytest.raises(ValueError):
        lc.distance_matrix([1.0])


def test_distance_matrix_brute_force(rng):
    x = rng.normal(size=50)
    D = lc.distance_matrix(x).values
    ref = np.array([[abs(a - b) for b in x] for a in x])
    assert np.array_equal(D, ref)
    assert np.array_equal(D, D.T) and np.all(np.diag(D) == 0)


def test_combined_examples(rng):
    S = np.tile([50.0, 3.0, -2.0], (20, 1))
    assert np.array_equal(lc.combined_distance(S).values, np.zeros((20, 20)))
    S = rng.normal(size=(40, 3))
    S2 = S.copy()
    S2[:, 1] *= 10.0
    np.testing.assert_allclose(lc.combined_distance(S2).values, lc.combined_distance(S).values,
                               atol=1e-14)


def test_combined_brute_force(rng):
    S = rng.normal(size=(30, 3))
    D = lc.combined_distance(S).values
    ref = np.zeros((30, 30))
    for b in range(3):
        m = max(abs(v) for v in S[:, b])
        for k in range(30):
            for l in range(30):
                ref[k, l] += abs(S[k, b] - S[l, b]) / m
    np.testing.assert_allclose(D, ref, atol=1e-14, rtol=0)
    # the (3, K) layout gives the same matrix
    np.testing.assert_array_equal(lc.combined_distance(S.T).values, D)


def test_combined_zero_stream_guard(rng):
    S = rng.normal(size=(10, 3))
    S[:, 2] = 0.0
    D = lc.combined_distance(S).values
    assert np.all(np.isfinite(D))
    with pytest.raises(AllInvariantsConstant):
        lc.combined_distance(np.zeros((10, 3)))


@given(arrays(np.float64, (12, 3), elements=st.floats(-1e3, 1e3)),
       arrays(np.float64, 3, elements=st.floats(1e-3, 1e3)))
def test_combined_invariant_to_rescaling(S, c):
    if not np.any(np.max(np.abs(S), axis=0) > 0):
        return
    a = lc.combined_distance(S).values
    b = lc.combined_distance(S * c).values
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


def test_log_scaled_copy():
    D = lc.distance_matrix([1.0, 11.0])
    np.testing.assert_allclose(D.log_scaled(), [[-12.0, 1.0], [1.0, -12.0]])


# --- candidates --------------------------------------------------------------------


def test_extract_zero_matrix_full_window():
    K = 60
    cands = lc.extract_candidates(np.zeros((K, K)), tau=0.05, min_sep=10, window=K)
    assert len(cands) == 1
    assert (cands[0].i, cands[0].j) == (0, 10)


def test_extract_zero_matrix_small_window_spacing():
    K = 60
    cands = lc.extract_candidates(np.zeros((K, K)), tau=0.05, min_sep=10, window=10)
    assert cands
    for c in cands:
        assert c.j - c.i >= 10
    # survivors are spread out: no two fall in the same suppression window
    for a in cands:
        for b in cands:
            if a is not b:
                assert max(abs(a.i - b.i), abs(a.j - b.j)) > 5


def test_extract_tau_zero_and_bad_args():
    D = np.zeros((20, 20))
    assert lc.extract_candidates(D, tau=0.0) == []
    with pytest.raises(ValueError):
        lc.extract_candidates(D, min_sep=0)
    with pytest.raises(ValueError):
        lc.extract_candidates(D, window=0)


def test_extract_planted_minimum(rng):
    K = 200
    D = lc.DistanceMatrix(rng.uniform(0.5, 1.0, (K, K)), "combined")
    D.values[:] = 0.5 * (D.values + D.values.T)
    np.fill_diagonal(D.values, 0.0)
    D.values[30, 150] = D.values[150, 30] = 0.01
    D.values[31, 151] = D.values[151, 31] = 0.02  # neighbour, suppressed
    cands = lc.extract_candidates(D, tau=0.05, min_sep=40, window=10)
    assert [(c.i, c.j) for c in cands] == [(30, 150)]
    assert cands[0].score == 0.01


@pytest.mark.parametrize("impl", ["numpy_impl", "numba_impl"])
def test_local_minima_backends_agree(rng, impl):
    mod = getattr(_kernels, impl)
    if mod is None:
        pytest.skip("numba not installed")
    x = np.round(rng.normal(size=150), 1)  # plenty of ties
    D = np.abs(x[:, None] - x[None, :])
    ref = _kernels.numpy_impl.local_minima(D, 0.05, 20, 7)
    got = mod.local_minima(D, 0.05, 20, 7)
    assert np.array_equal(ref[0], got[0]) and np.array_equal(ref[1], got[1])


# --- gating ------------------------------------------------------------------------


def test_chi2_threshold_oracle():
    assert lc.chi2_threshold(3, 0.05) == pytest.approx(CHI2_3_095, abs=1e-10)


def test_gate_accepts_coincident_and_rejects_far():
    poses = [Pose2.from_xyt(0.0, 0.0, 0.0)] * 60
    poses[50] = Pose2.from_xyt(10.0, 0.0, 0.0)
    cands = [lc.LoopCandidate(0, 40, 0.01), lc.LoopCandidate(0, 50, 0.01)]
    acc = lc.gate_candidates(cands, poses, lambda i, j: np.eye(3) * 0.01)
    assert [(c.i, c.j) for c in acc] == [(0, 40)]
    assert cands[0].statistic == 0.0 and cands[0].accepted
    assert cands[1].statistic == pytest.approx(100.0 / 0.01) and not cands[1].accepted


def test_gate_threshold_edge():
    Ti = Pose2.identity()
    d = np.sqrt(CHI2_3_095) * 0.999
    Tj = Pose2.from_xyt(d, 0.0, 0.0)
    acc = lc.gate_candidates([lc.LoopCandidate(0, 1, 0.0)], [Ti, Tj], lambda i, j: np.eye(3))
    assert len(acc) == 1
    Tj = Pose2.from_xyt(d / 0.998, 0.0, 0.0)
    acc = lc.gate_candidates([lc.LoopCandidate(0, 1, 0.0)], [Ti, Tj], lambda i, j: np.eye(3))
    assert acc == []


def test_gate_singular_covariance_rejects(caplog):
    poses = [Pose2.identity()] * 2
    c = lc.LoopCandidate(0, 1, 0.0)
    with caplog.at_level(logging.WARNING, logger="magnav.loopclosure"):
        acc = lc.gate_candidates([c], poses, lambda i, j: np.zeros((3, 3)))
    assert acc == [] and c.statistic == float("inf") and not c.accepted
    assert "rejecting candidate" in caplog.text


@given(arrays(np.float64, 3, elements=st.floats(-3, 3)),
       arrays(np.float64, (3, 3), elements=st.floats(-2, 2)),
       st.floats(0.01, 0.99))
def test_gate_monotone_in_covariance(xi, A, c):
    S = A @ A.T + 0.05 * np.eye(3)
    Ti = Pose2.identity()
    Tj = se2_exp(xi)
    big = lc.gate_statistic(Ti, Tj, S)
    small = lc.gate_statistic(Ti, Tj, c * S)
    thr = lc.chi2_threshold()
    assert small >= big * (1 - 1e-9)
    if big > thr:
        assert small > thr
