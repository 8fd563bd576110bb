"""Pure-numpy batch kernels (fallback when the compiled extension is absent).

Poses are rows ``(x, y, z, yaw)``. All functions return freshly allocated
arrays and accept any float64-convertible input.
"""

import numpy as np

TWO_PI = 2.0 * np.pi


def _wrap(a):
    w = np.fmod(a, TWO_PI)
    w = np.where(w <= -np.pi, w + TWO_PI, w)
    return np.where(w > np.pi, w - TWO_PI, w)


def pose_pair_batch(meas, inv_sigma, pa, pb):
    """Residual ``inverse(meas) * inverse(pa) * pb`` and its Jacobians."""
    meas = np.asarray(meas, dtype=float)
    inv_sigma = np.asarray(inv_sigma, dtype=float)
    pa = np.asarray(pa, dtype=float)
    pb = np.asarray(pb, dtype=float)
    n = len(meas)
    th = meas[:, 3] + pa[:, 3]
    c, s = np.cos(th), np.sin(th)
    dx = pb[:, 0] - pa[:, 0]
    dy = pb[:, 1] - pa[:, 1]
    # Rz(-psi_a) (pb - pa), then subtract meas translation and rotate by Rz(-psi_m)
    ca, sa = np.cos(pa[:, 3]), np.sin(pa[:, 3])
    qx = ca * dx + sa * dy - meas[:, 0]
    qy = -sa * dx + ca * dy - meas[:, 1]
    cm, sm = np.cos(meas[:, 3]), np.sin(meas[:, 3])
    r = np.empty((n, 4))
    r[:, 0] = cm * qx + sm * qy
    r[:, 1] = -sm * qx + cm * qy
    r[:, 2] = pb[:, 2] - pa[:, 2] - meas[:, 2]
    r[:, 3] = _wrap(pb[:, 3] - pa[:, 3] - meas[:, 3])
    r *= inv_sigma

    jb = np.zeros((n, 4, 4))
    jb[:, 0, 0] = c
    jb[:, 0, 1] = s
    jb[:, 1, 0] = -s
    jb[:, 1, 1] = c
    jb[:, 2, 2] = 1.0
    jb[:, 3, 3] = 1.0
    ja = -jb
    # -M K dx with M = Rz(-th): K dx = (-dy, dx, 0)
    ja[:, 0, 3] = -(c * -dy + s * dx)
    ja[:, 1, 3] = -(-s * -dy + c * dx)
    ja *= inv_sigma[:, :, None]
    jb *= inv_sigma[:, :, None]
    return r, ja, jb


def distance_batch(d, inv_sigma, pa, pb):
    d = np.asarray(d, dtype=float)
    inv_sigma = np.asarray(inv_sigma, dtype=float)
    diff = np.asarray(pa, dtype=float)[:, :3] - np.asarray(pb, dtype=float)[:, :3]
    n = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    r = (d - n) * inv_sigma
    ja = np.zeros((len(d), 4))
    safe = np.where(n > 0, n, 1.0)
    ja[:, :3] = np.where((n > 0)[:, None], -diff * (inv_sigma / safe)[:, None], 0.0)
    return r, ja, -ja


def detection_batch(dirs, inv_depth, cam_pos, basis, inv_sig_dir, inv_sig_s, pk, pi):
    """Tangent-plane bearing + inverse-depth residuals of detection edges.

    ``basis`` holds the two tangent vectors of each measured direction as
    rows, shape ``(n, 2, 3)``. Rows whose predicted range is zero are
    flagged invalid and get zero residual and Jacobian.
    """
    dirs = np.asarray(dirs, dtype=float)
    inv_depth = np.asarray(inv_depth, dtype=float)
    cam_pos = np.asarray(cam_pos, dtype=float)
    basis = np.asarray(basis, dtype=float)
    inv_sig_dir = np.asarray(inv_sig_dir, dtype=float)
    inv_sig_s = np.asarray(inv_sig_s, dtype=float)
    pk = np.asarray(pk, dtype=float)
    pi = np.asarray(pi, dtype=float)
    m = len(dirs)
    ck, sk = np.cos(pk[:, 3]), np.sin(pk[:, 3])
    dx = pi[:, :3] - pk[:, :3]
    # rk = Rz(-psi_k)
    rk = np.zeros((m, 3, 3))
    rk[:, 0, 0] = ck
    rk[:, 0, 1] = sk
    rk[:, 1, 0] = -sk
    rk[:, 1, 1] = ck
    rk[:, 2, 2] = 1.0
    v = np.einsum("nij,nj->ni", rk, dx) - cam_pos
    rng = np.sqrt(np.einsum("ij,ij->i", v, v))
    valid = rng > 0
    safe = np.where(valid, rng, 1.0)
    u = v / safe[:, None]
    diff = dirs - u
    r = np.empty((m, 3))
    r[:, :2] = np.einsum("nkj,nj->nk", basis, diff) * inv_sig_dir[:, None]
    r[:, 2] = (inv_depth - 1.0 / safe) * inv_sig_s

    proj = (np.eye(3)[None] - u[:, :, None] * u[:, None, :]) / safe[:, None, None]
    dr_dv = np.empty((m, 3, 3))
    dr_dv[:, :2] = -np.einsum("nkj,nji->nki", basis, proj) * inv_sig_dir[:, None, None]
    dr_dv[:, 2] = u / (safe * safe)[:, None] * inv_sig_s[:, None]
    jpos = np.einsum("nij,njk->nik", dr_dv, rk)
    kdx = np.stack([-dx[:, 1], dx[:, 0], np.zeros(m)], axis=1)
    jyaw = -np.einsum("nij,nj->ni", jpos, kdx)
    jk = np.zeros((m, 3, 4))
    ji = np.zeros((m, 3, 4))
    jk[:, :, :3] = -jpos
    jk[:, :, 3] = jyaw
    ji[:, :, :3] = jpos
    r[~valid] = 0.0
    jk[~valid] = 0.0
    ji[~valid] = 0.0
    return r, jk, ji, valid.astype(np.uint8)


def propagate_batch(opt, vio_ref, vio_now):
    """Row-wise ``opt * inverse(vio_ref) * vio_now``."""
    opt = np.asarray(opt, dtype=float)
    vio_ref = np.asarray(vio_ref, dtype=float)
    vio_now = np.asarray(vio_now, dtype=float)
    cr, sr = np.cos(vio_ref[:, 3]), np.sin(vio_ref[:, 3])
    dx = vio_now[:, 0] - vio_ref[:, 0]
    dy = vio_now[:, 1] - vio_ref[:, 1]
    lx = cr * dx + sr * dy
    ly = -sr * dx + cr * dy
    co, so = np.cos(opt[:, 3]), np.sin(opt[:, 3])
    out = np.empty_like(opt)
    out[:, 0] = opt[:, 0] + co * lx - so * ly
    out[:, 1] = opt[:, 1] + so * lx + co * ly
    out[:, 2] = opt[:, 2] + vio_now[:, 2] - vio_ref[:, 2]
    out[:, 3] = _wrap(opt[:, 3] + vio_now[:, 3] - vio_ref[:, 3])
    return out
