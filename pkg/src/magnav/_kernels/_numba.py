"""numba-compiled twins of the kernels in ``_numpy``.

Same signatures and outputs; loops are written out per block so the
compiled code never allocates per-block temporaries.
"""
import math

import numpy as np
from numba import njit, prange


@njit(cache=True, parallel=True)
def dipole_field(points, positions, moments, scale):
    P = points.shape[0]
    nd = positions.shape[0]
    B = np.zeros((P, 3))
    G = np.zeros((P, 3, 3))
    dmin = np.full(P, np.inf)
    for p in prange(P):
        for k in range(nd):
            dx = points[p, 0] - positions[k, 0]
            dy = points[p, 1] - positions[k, 1]
            dz = points[p, 2] - positions[k, 2]
            r2 = dx * dx + dy * dy + dz * dz
            r = math.sqrt(r2)
            if r < dmin[p]:
                dmin[p] = r
            inv3 = 1.0 / (r2 * r)
            inv5 = inv3 / r2
            inv7 = inv5 / r2
            mx, my, mz = moments[k, 0], moments[k, 1], moments[k, 2]
            mr = mx * dx + my * dy + mz * dz
            B[p, 0] += scale * (3.0 * mr * inv5 * dx - inv3 * mx)
            B[p, 1] += scale * (3.0 * mr * inv5 * dy - inv3 * my)
            B[p, 2] += scale * (3.0 * mr * inv5 * dz - inv3 * mz)
            d = (dx, dy, dz)
            m = (mx, my, mz)
            for i in range(3):
                for j in range(3):
                    s = m[j] * d[i] + m[i] * d[j]
                    if i == j:
                        s += mr
                    G[p, i, j] += 3.0 * scale * (s * inv5 - 5.0 * mr * inv7 * d[i] * d[j])
    return B, G, dmin


@njit(cache=True)
def _rz_t_apply(c, s, v0, v1, v2):
    """Rz(theta)^T v."""
    return c * v0 + s * v1, -s * v0 + c * v1, v2


@njit(cache=True)
def _rz_apply(c, s, v0, v1, v2):
    return c * v0 - s * v1, s * v0 + c * v1, v2


@njit(cache=True, parallel=True)
def fd_blocks(theta, r, ia, ib, Ba, Bb, Gb):
    n = ia.shape[0]
    res = np.empty((n, 3))
    J = np.zeros((n, 3, 6))
    for k in prange(n):
        a = ia[k]
        b = ib[k]
        ca, sa = math.cos(theta[a]), math.sin(theta[a])
        cb, sb = math.cos(theta[b]), math.sin(theta[b])
        u0, u1, u2 = _rz_t_apply(cb, sb, r[b, 0] - r[a, 0], r[b, 1] - r[a, 1], 0.0)
        t0, t1, t2 = _rz_apply(ca, sa, Ba[k, 0], Ba[k, 1], Ba[k, 2])
        w0, w1, w2 = _rz_t_apply(cb, sb, t0, t1, t2)
        # C_b^T C_a K B_a with K B = (-B_y, B_x, 0)
        t0, t1, t2 = _rz_apply(ca, sa, -Ba[k, 1], Ba[k, 0], 0.0)
        k0, k1, k2 = _rz_t_apply(cb, sb, t0, t1, t2)
        ku = (-u1, u0, 0.0)
        kw = (-w1, w0, 0.0)
        cdt, sdt = math.cos(theta[a] - theta[b]), math.sin(theta[a] - theta[b])
        uu = (u0, u1, u2)
        ww = (w0, w1, w2)
        kk = (k0, k1, k2)
        for i in range(3):
            gu = Gb[k, i, 0] * uu[0] + Gb[k, i, 1] * uu[1] + Gb[k, i, 2] * uu[2]
            res[k, i] = gu - Bb[k, i] + ww[i]
            gku = Gb[k, i, 0] * ku[0] + Gb[k, i, 1] * ku[1]
            J[k, i, 3] = -gku - kw[i]
            J[k, i, 0] = kk[i]
            J[k, i, 4] = Gb[k, i, 0]
            J[k, i, 5] = Gb[k, i, 1]
            # -G[:, :2] R(theta_a - theta_b)
            J[k, i, 1] = -(Gb[k, i, 0] * cdt + Gb[k, i, 1] * sdt)
            J[k, i, 2] = -(-Gb[k, i, 0] * sdt + Gb[k, i, 1] * cdt)
    return res, J


@njit(cache=True, parallel=True)
def cd_blocks(theta, r, ia, ib, ic, Ba, Bc, Gb):
    n = ia.shape[0]
    res = np.empty((n, 3))
    J = np.zeros((n, 3, 9))
    for k in prange(n):
        a = ia[k]
        b = ib[k]
        c = ic[k]
        ca, sa = math.cos(theta[a]), math.sin(theta[a])
        cb, sb = math.cos(theta[b]), math.sin(theta[b])
        cc, sc = math.cos(theta[c]), math.sin(theta[c])
        u0, u1, u2 = _rz_t_apply(cb, sb, r[c, 0] - r[a, 0], r[c, 1] - r[a, 1], 0.0)
        t0, t1, t2 = _rz_apply(ca, sa, Ba[k, 0], Ba[k, 1], Ba[k, 2])
        wa = _rz_t_apply(cb, sb, t0, t1, t2)
        t0, t1, t2 = _rz_apply(cc, sc, Bc[k, 0], Bc[k, 1], Bc[k, 2])
        wc = _rz_t_apply(cb, sb, t0, t1, t2)
        t0, t1, t2 = _rz_apply(ca, sa, -Ba[k, 1], Ba[k, 0], 0.0)
        ka = _rz_t_apply(cb, sb, t0, t1, t2)
        t0, t1, t2 = _rz_apply(cc, sc, -Bc[k, 1], Bc[k, 0], 0.0)
        kc = _rz_t_apply(cb, sb, t0, t1, t2)
        dw0 = wc[0] - wa[0]
        dw1 = wc[1] - wa[1]
        dw2 = wc[2] - wa[2]
        dw = (dw0, dw1, dw2)
        kdw = (-dw1, dw0, 0.0)
        uu = (u0, u1, u2)
        ku = (-u1, u0)
        cba, sba = math.cos(theta[a] - theta[b]), math.sin(theta[a] - theta[b])
        cbc, sbc = math.cos(theta[c] - theta[b]), math.sin(theta[c] - theta[b])
        for i in range(3):
            g0, g1, g2 = Gb[k, i, 0], Gb[k, i, 1], Gb[k, i, 2]
            res[k, i] = g0 * uu[0] + g1 * uu[1] + g2 * uu[2] - dw[i]
            J[k, i, 3] = -(g0 * ku[0] + g1 * ku[1]) + kdw[i]
            J[k, i, 0] = ka[i]
            J[k, i, 6] = -kc[i]
            J[k, i, 1] = -(g0 * cba + g1 * sba)
            J[k, i, 2] = -(-g0 * sba + g1 * cba)
            J[k, i, 7] = g0 * cbc + g1 * sbc
            J[k, i, 8] = -g0 * sbc + g1 * cbc
    return res, J


@njit(cache=True)
def slip_blocks(theta, r, ia, ib):
    n = ia.shape[0]
    res = np.empty(n)
    J = np.zeros((n, 1, 6))
    for k in range(n):
        a = ia[k]
        b = ib[k]
        cb, sb = math.cos(theta[b]), math.sin(theta[b])
        dx = r[b, 0] - r[a, 0]
        dy = r[b, 1] - r[a, 1]
        ux = cb * dx + sb * dy
        res[k] = -sb * dx + cb * dy
        J[k, 0, 3] = -ux
        J[k, 0, 5] = 1.0
        dth = theta[a] - theta[b]
        J[k, 0, 1] = -math.sin(dth)
        J[k, 0, 2] = -math.cos(dth)
    return res, J


@njit(cache=True, parallel=True)
def abs_diff_matrix(x):
    K = x.shape[0]
    D = np.empty((K, K))
    for i in prange(K):
        for j in range(K):
            D[i, j] = abs(x[i] - x[j])
    return D


@njit(cache=True)
def _local_minima(D, tau, min_sep, window):
    K = D.shape[0]
    h = window // 2
    ii = []
    jj = []
    for i in range(K):
        for j in range(i + min_sep, K):
            v = D[i, j]
            if not v < tau:
                continue
            is_min = True
            for k in range(max(0, i - h), min(K, i + h + 1)):
                if not is_min:
                    break
                for l in range(max(0, j - h), min(K, j + h + 1)):
                    if l - k < min_sep:
                        continue
                    w = D[k, l]
                    if w < v or (w == v and (k < i or (k == i and l < j))):
                        is_min = False
                        break
            if is_min:
                ii.append(i)
                jj.append(j)
    out_i = np.empty(len(ii), dtype=np.int64)
    out_j = np.empty(len(jj), dtype=np.int64)
    for n in range(len(ii)):
        out_i[n] = ii[n]
        out_j[n] = jj[n]
    return out_i, out_j


def local_minima(D, tau, min_sep, window):
    return _local_minima(np.ascontiguousarray(D, dtype=np.float64), float(tau),
                         int(min_sep), int(window))
