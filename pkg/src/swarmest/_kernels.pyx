# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled batch kernels; same contract as ``_kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport cos, sin, sqrt, fmod, M_PI

cnp.import_array()

cdef double TWO_PI = 2.0 * M_PI


cdef inline double _wrap(double a) noexcept nogil:
    cdef double w = fmod(a, TWO_PI)
    if w <= -M_PI:
        w += TWO_PI
    elif w > M_PI:
        w -= TWO_PI
    return w


def pose_pair_batch(meas, inv_sigma, pa, pb):
    cdef double[:, ::1] m = np.ascontiguousarray(meas, dtype=np.float64)
    cdef double[:, ::1] isg = np.ascontiguousarray(inv_sigma, dtype=np.float64)
    cdef double[:, ::1] a = np.ascontiguousarray(pa, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(pb, dtype=np.float64)
    cdef Py_ssize_t n = m.shape[0], k, row
    r_arr = np.empty((n, 4))
    ja_arr = np.zeros((n, 4, 4))
    jb_arr = np.zeros((n, 4, 4))
    cdef double[:, ::1] r = r_arr
    cdef double[:, :, ::1] ja = ja_arr
    cdef double[:, :, ::1] jb = jb_arr
    cdef double th, c, s, dx, dy, ca, sa, qx, qy, cm, sm, w
    with nogil:
        for k in range(n):
            th = m[k, 3] + a[k, 3]
            c = cos(th)
            s = sin(th)
            dx = b[k, 0] - a[k, 0]
            dy = b[k, 1] - a[k, 1]
            ca = cos(a[k, 3])
            sa = sin(a[k, 3])
            qx = ca * dx + sa * dy - m[k, 0]
            qy = -sa * dx + ca * dy - m[k, 1]
            cm = cos(m[k, 3])
            sm = sin(m[k, 3])
            r[k, 0] = (cm * qx + sm * qy) * isg[k, 0]
            r[k, 1] = (-sm * qx + cm * qy) * isg[k, 1]
            r[k, 2] = (b[k, 2] - a[k, 2] - m[k, 2]) * isg[k, 2]
            r[k, 3] = _wrap(b[k, 3] - a[k, 3] - m[k, 3]) * isg[k, 3]

            w = isg[k, 0]
            jb[k, 0, 0] = c * w
            jb[k, 0, 1] = s * w
            ja[k, 0, 0] = -c * w
            ja[k, 0, 1] = -s * w
            ja[k, 0, 3] = -(-c * dy + s * dx) * w
            w = isg[k, 1]
            jb[k, 1, 0] = -s * w
            jb[k, 1, 1] = c * w
            ja[k, 1, 0] = s * w
            ja[k, 1, 1] = -c * w
            ja[k, 1, 3] = -(s * dy + c * dx) * w
            w = isg[k, 2]
            jb[k, 2, 2] = w
            ja[k, 2, 2] = -w
            w = isg[k, 3]
            jb[k, 3, 3] = w
            ja[k, 3, 3] = -w
    return r_arr, ja_arr, jb_arr


def distance_batch(d, inv_sigma, pa, pb):
    cdef double[::1] dd = np.ascontiguousarray(d, dtype=np.float64)
    cdef double[::1] isg = np.ascontiguousarray(inv_sigma, dtype=np.float64)
    cdef double[:, ::1] a = np.ascontiguousarray(pa, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(pb, dtype=np.float64)
    cdef Py_ssize_t n = dd.shape[0], k, q
    r_arr = np.empty(n)
    ja_arr = np.zeros((n, 4))
    jb_arr = np.zeros((n, 4))
    cdef double[::1] r = r_arr
    cdef double[:, ::1] ja = ja_arr
    cdef double[:, ::1] jb = jb_arr
    cdef double diff[3]
    cdef double nrm, g
    with nogil:
        for k in range(n):
            nrm = 0.0
            for q in range(3):
                diff[q] = a[k, q] - b[k, q]
                nrm += diff[q] * diff[q]
            nrm = sqrt(nrm)
            r[k] = (dd[k] - nrm) * isg[k]
            if nrm > 0:
                for q in range(3):
                    g = -diff[q] * isg[k] / nrm
                    ja[k, q] = g
                    jb[k, q] = -g
    return r_arr, ja_arr, jb_arr


def detection_batch(dirs, inv_depth, cam_pos, basis, inv_sig_dir, inv_sig_s, pk, pi):
    cdef double[:, ::1] zu = np.ascontiguousarray(dirs, dtype=np.float64)
    cdef double[::1] zs = np.ascontiguousarray(inv_depth, dtype=np.float64)
    cdef double[:, ::1] cp = np.ascontiguousarray(cam_pos, dtype=np.float64)
    cdef double[:, :, ::1] bs = np.ascontiguousarray(basis, dtype=np.float64)
    cdef double[::1] isd = np.ascontiguousarray(inv_sig_dir, dtype=np.float64)
    cdef double[::1] iss = np.ascontiguousarray(inv_sig_s, dtype=np.float64)
    cdef double[:, ::1] k_ = np.ascontiguousarray(pk, dtype=np.float64)
    cdef double[:, ::1] i_ = np.ascontiguousarray(pi, dtype=np.float64)
    cdef Py_ssize_t n = zu.shape[0], e, p, q, t
    r_arr = np.zeros((n, 3))
    jk_arr = np.zeros((n, 3, 4))
    ji_arr = np.zeros((n, 3, 4))
    valid_arr = np.zeros(n, dtype=np.uint8)
    cdef double[:, ::1] r = r_arr
    cdef double[:, :, ::1] jk = jk_arr
    cdef double[:, :, ::1] ji = ji_arr
    cdef unsigned char[::1] valid = valid_arr
    cdef double ck, sk, dx0, dx1, dx2, rng, inv_n, acc
    cdef double v[3]
    cdef double u[3]
    cdef double rk[3][3]
    cdef double proj[3][3]
    cdef double drdv[3][3]
    cdef double jpos[3][3]
    cdef double kdx[3]
    with nogil:
        for e in range(n):
            ck = cos(k_[e, 3])
            sk = sin(k_[e, 3])
            dx0 = i_[e, 0] - k_[e, 0]
            dx1 = i_[e, 1] - k_[e, 1]
            dx2 = i_[e, 2] - k_[e, 2]
            rk[0][0] = ck; rk[0][1] = sk; rk[0][2] = 0.0
            rk[1][0] = -sk; rk[1][1] = ck; rk[1][2] = 0.0
            rk[2][0] = 0.0; rk[2][1] = 0.0; rk[2][2] = 1.0
            v[0] = ck * dx0 + sk * dx1 - cp[e, 0]
            v[1] = -sk * dx0 + ck * dx1 - cp[e, 1]
            v[2] = dx2 - cp[e, 2]
            rng = sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2])
            if rng <= 0:
                continue
            valid[e] = 1
            inv_n = 1.0 / rng
            for p in range(3):
                u[p] = v[p] * inv_n
            for p in range(2):
                acc = 0.0
                for q in range(3):
                    acc += bs[e, p, q] * (zu[e, q] - u[q])
                r[e, p] = acc * isd[e]
            r[e, 2] = (zs[e] - inv_n) * iss[e]
            for p in range(3):
                for q in range(3):
                    proj[p][q] = ((1.0 if p == q else 0.0) - u[p] * u[q]) * inv_n
            for p in range(2):
                for q in range(3):
                    acc = 0.0
                    for t in range(3):
                        acc += bs[e, p, t] * proj[t][q]
                    drdv[p][q] = -acc * isd[e]
            for q in range(3):
                drdv[2][q] = u[q] * inv_n * inv_n * iss[e]
            for p in range(3):
                for q in range(3):
                    acc = 0.0
                    for t in range(3):
                        acc += drdv[p][t] * rk[t][q]
                    jpos[p][q] = acc
            kdx[0] = -dx1
            kdx[1] = dx0
            kdx[2] = 0.0
            for p in range(3):
                acc = 0.0
                for q in range(3):
                    ji[e, p, q] = jpos[p][q]
                    jk[e, p, q] = -jpos[p][q]
                    acc += jpos[p][q] * kdx[q]
                jk[e, p, 3] = -acc
    return r_arr, jk_arr, ji_arr, valid_arr


def propagate_batch(opt, vio_ref, vio_now):
    cdef double[:, ::1] o = np.ascontiguousarray(opt, dtype=np.float64)
    cdef double[:, ::1] a = np.ascontiguousarray(vio_ref, dtype=np.float64)
    cdef double[:, ::1] b = np.ascontiguousarray(vio_now, dtype=np.float64)
    cdef Py_ssize_t n = o.shape[0], k
    out_arr = np.empty((n, 4))
    cdef double[:, ::1] out = out_arr
    cdef double cr, sr, dx, dy, lx, ly, co, so
    with nogil:
        for k in range(n):
            cr = cos(a[k, 3])
            sr = sin(a[k, 3])
            dx = b[k, 0] - a[k, 0]
            dy = b[k, 1] - a[k, 1]
            lx = cr * dx + sr * dy
            ly = -sr * dx + cr * dy
            co = cos(o[k, 3])
            so = sin(o[k, 3])
            out[k, 0] = o[k, 0] + co * lx - so * ly
            out[k, 1] = o[k, 1] + so * lx + co * ly
            out[k, 2] = o[k, 2] + b[k, 2] - a[k, 2]
            out[k, 3] = _wrap(o[k, 3] + b[k, 3] - a[k, 3])
    return out_arr
