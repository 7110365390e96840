"""Vectorized numpy reference kernels (fallback when numba is disabled)."""
import numpy as np
from scipy.ndimage import minimum_filter

# d/dphi of a z-rotation, as a 3x3 matrix acting on the rotated vector
_KZ = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])


def dipole_field(points, positions, moments, scale):
    """Field, gradient and nearest-source distance of point dipoles.

    points (P, 3), positions (D, 3), moments (D, 3) -> B (P, 3), G (P, 3, 3),
    dmin (P,)
    """
    points = np.ascontiguousarray(points, dtype=float)
    P = points.shape[0]
    B = np.zeros((P, 3))
    G = np.zeros((P, 3, 3))
    if positions.shape[0] == 0:
        return B, G, np.full(P, np.inf)
    d = points[:, None, :] - positions[None, :, :]  # (P, D, 3)
    r2 = np.einsum("pdi,pdi->pd", d, d)
    r = np.sqrt(r2)
    inv3 = 1.0 / (r2 * r)
    inv5 = inv3 / r2
    inv7 = inv5 / r2
    mr = np.einsum("pdi,di->pd", d, moments)
    B = scale * np.sum(
        3.0 * (mr * inv5)[..., None] * d - inv3[..., None] * moments[None], axis=1
    )
    eye = np.eye(3)
    outer_md = moments[None, :, None, :] * d[..., :, None]  # m_j r_i
    sym = outer_md + np.swapaxes(outer_md, -1, -2) + mr[..., None, None] * eye
    rr = d[..., :, None] * d[..., None, :]
    G = 3.0 * scale * np.sum(
        inv5[..., None, None] * sym - 5.0 * (mr * inv7)[..., None, None] * rr, axis=1
    )
    return B, G, r.min(axis=1)


def _rot3(theta):
    n = theta.shape[0]
    c, s = np.cos(theta), np.sin(theta)
    R = np.zeros((n, 3, 3))
    R[:, 0, 0] = c
    R[:, 0, 1] = -s
    R[:, 1, 0] = s
    R[:, 1, 1] = c
    R[:, 2, 2] = 1.0
    return R


def _pad(v2):
    return np.column_stack([v2, np.zeros(v2.shape[0])])


def fd_blocks(theta, r, ia, ib, Ba, Bb, Gb):
    """Forward-difference magnetic pseudomeasurement residuals and Jacobians.

    Ba, Bb (n, 3) are body-frame fields at the two poses, Gb (n, 3, 3) the
    gradient at the second. Jacobian columns: (phi_a, rho_a, phi_b, rho_b).
    """
    Ca, Cb = _rot3(theta[ia]), _rot3(theta[ib])
    d3 = _pad(r[ib] - r[ia])
    CbT = np.swapaxes(Cb, 1, 2)
    u = np.einsum("nij,nj->ni", CbT, d3)
    rotBa = np.einsum("nij,nj->ni", Ca, Ba)
    w = np.einsum("nij,nj->ni", CbT, rotBa)  # C_b^T C_a B_a
    res = np.einsum("nij,nj->ni", Gb, u) - Bb + w

    n = ia.shape[0]
    J = np.zeros((n, 3, 6))
    Ku = u @ _KZ.T
    Kw = w @ _KZ.T
    J[:, :, 3] = -np.einsum("nij,nj->ni", Gb, Ku) - Kw
    J[:, :, 0] = np.einsum(
        "nij,nj->ni", CbT, np.einsum("nij,nj->ni", Ca, Ba @ _KZ.T)
    )
    J[:, :, 4:6] = Gb[:, :, :2]
    Rab = np.einsum("nij,njk->nik", CbT[:, :2, :2], Ca[:, :2, :2])
    J[:, :, 1:3] = -np.einsum("nij,njk->nik", Gb[:, :, :2], Rab)
    return res, J


def cd_blocks(theta, r, ia, ib, ic, Ba, Bc, Gb):
    """Central-difference residuals; Jacobian columns (a, b, c) x (phi, rho)."""
    Ca, Cb, Cc = _rot3(theta[ia]), _rot3(theta[ib]), _rot3(theta[ic])
    CbT = np.swapaxes(Cb, 1, 2)
    u = np.einsum("nij,nj->ni", CbT, _pad(r[ic] - r[ia]))
    wa = np.einsum("nij,nj->ni", CbT, np.einsum("nij,nj->ni", Ca, Ba))
    wc = np.einsum("nij,nj->ni", CbT, np.einsum("nij,nj->ni", Cc, Bc))
    res = np.einsum("nij,nj->ni", Gb, u) - (wc - wa)

    n = ia.shape[0]
    J = np.zeros((n, 3, 9))
    J[:, :, 3] = -np.einsum("nij,nj->ni", Gb, u @ _KZ.T) + (wc - wa) @ _KZ.T
    J[:, :, 0] = np.einsum(
        "nij,nj->ni", CbT, np.einsum("nij,nj->ni", Ca, Ba @ _KZ.T)
    )
    J[:, :, 6] = -np.einsum(
        "nij,nj->ni", CbT, np.einsum("nij,nj->ni", Cc, Bc @ _KZ.T)
    )
    Rba = np.einsum("nij,njk->nik", CbT[:, :2, :2], Ca[:, :2, :2])
    Rbc = np.einsum("nij,njk->nik", CbT[:, :2, :2], Cc[:, :2, :2])
    J[:, :, 1:3] = -np.einsum("nij,njk->nik", Gb[:, :, :2], Rba)
    J[:, :, 7:9] = np.einsum("nij,njk->nik", Gb[:, :, :2], Rbc)
    return res, J


def slip_blocks(theta, r, ia, ib):
    """Lateral body-frame displacement; Jacobian columns (phi_a, rho_a, phi_b, rho_b)."""
    cb, sb = np.cos(theta[ib]), np.sin(theta[ib])
    d = r[ib] - r[ia]
    # body-frame displacement (C_b^T d)
    ux = cb * d[:, 0] + sb * d[:, 1]
    uy = -sb * d[:, 0] + cb * d[:, 1]
    res = uy
    n = ia.shape[0]
    J = np.zeros((n, 1, 6))
    J[:, 0, 3] = -ux
    J[:, 0, 5] = 1.0
    # -[0 1] C_b^T C_a
    dth = theta[ia] - theta[ib]
    J[:, 0, 1] = -np.sin(dth)
    J[:, 0, 2] = -np.cos(dth)
    return res, J


def abs_diff_matrix(x):
    x = np.asarray(x, dtype=float)
    return np.abs(x[:, None] - x[None, :])


def local_minima(D, tau, min_sep, window):
    """Upper-triangle entries below ``tau`` that are window minima.

    Ties are broken lexicographically by (value, i, j) so a flat region
    yields exactly one survivor per window.
    """
    K = D.shape[0]
    i, j = np.indices((K, K))
    valid = (j - i) >= min_sep
    vals = np.where(valid, D, np.inf)
    order = np.lexsort((j.ravel(), i.ravel(), vals.ravel()))
    rank = np.empty(K * K, dtype=np.int64)
    rank[order] = np.arange(K * K)
    rank = rank.reshape(K, K)
    big = K * K  # larger than any rank; minimum_filter casts cval through float
    rank = np.where(valid, rank, big)
    h = window // 2
    wmin = minimum_filter(rank, size=2 * h + 1, mode="constant", cval=big)
    keep = valid & (vals < tau) & (rank == wmin)
    ii, jj = np.nonzero(keep)
    return ii.astype(np.int64), jj.astype(np.int64)
