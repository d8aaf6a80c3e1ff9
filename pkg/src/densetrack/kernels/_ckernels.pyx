# cython: language_level=3
"""Compiled per-point kernels.

Loop-level twins of ``densetrack.kernels._numpy``. Every per-point reduction
runs sequentially in a fixed order, so results do not depend on batch layout.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor, log, sqrt

cnp.import_array()


cdef inline void _bilerp(const double[:, :, ::1] f, double x, double y,
                         double* out) noexcept nogil:
    cdef Py_ssize_t H = f.shape[0], W = f.shape[1], C = f.shape[2]
    cdef Py_ssize_t x0, y0, x1, y1, c
    cdef double wx, wy, top, bot
    if x < 0.0:
        x = 0.0
    elif x > W - 1.0:
        x = W - 1.0
    if y < 0.0:
        y = 0.0
    elif y > H - 1.0:
        y = H - 1.0
    x0 = <Py_ssize_t>floor(x)
    y0 = <Py_ssize_t>floor(y)
    x1 = x0 + 1 if x0 + 1 < W else W - 1
    y1 = y0 + 1 if y0 + 1 < H else H - 1
    wx = x - x0
    wy = y - y0
    for c in range(C):
        top = (1.0 - wx) * f[y0, x0, c] + wx * f[y0, x1, c]
        bot = (1.0 - wx) * f[y1, x0, c] + wx * f[y1, x1, c]
        out[c] = (1.0 - wy) * top + wy * bot


def bilinear_sample(fmap, pos):
    if fmap.ndim == 2:
        return bilinear_sample(fmap[:, :, None], pos)[:, 0]
    cdef const double[:, :, ::1] f = np.ascontiguousarray(fmap, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64)
    cdef Py_ssize_t n, N = p.shape[0], C = f.shape[2]
    out = np.empty((N, C))
    cdef double[:, ::1] o = out
    with nogil:
        for n in range(N):
            _bilerp(f, p[n, 0], p[n, 1], &o[n, 0])
    return out


def corr_window(fmap, qfeat, pos, int radius):
    cdef const double[:, :, ::1] f = np.ascontiguousarray(fmap, dtype=np.float64)
    cdef const double[:, ::1] q = np.ascontiguousarray(qfeat, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64)
    cdef Py_ssize_t N = p.shape[0], C = f.shape[2]
    cdef int side = 2 * radius + 1
    out = np.empty((N, side * side))
    cdef double[:, ::1] o = out
    buf = np.empty(C)
    cdef double[::1] b = buf
    cdef Py_ssize_t n, c
    cdef int dy, dx, k
    cdef double acc
    with nogil:
        for n in range(N):
            k = 0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    _bilerp(f, p[n, 0] + dx, p[n, 1] + dy, &b[0])
                    acc = 0.0
                    for c in range(C):
                        acc = acc + q[n, c] * b[c]
                    o[n, k] = acc
                    k = k + 1
    return out


def corr4d(fmap_q, fmap_t, qpos, cpos, int n):
    cdef const double[:, :, ::1] fq = np.ascontiguousarray(fmap_q, dtype=np.float64)
    cdef const double[:, :, ::1] ft = np.ascontiguousarray(fmap_t, dtype=np.float64)
    cdef const double[:, ::1] pq = np.ascontiguousarray(qpos, dtype=np.float64)
    cdef const double[:, ::1] pc = np.ascontiguousarray(cpos, dtype=np.float64)
    cdef Py_ssize_t N = pq.shape[0], C = fq.shape[2]
    cdef int K = n * n, half = n // 2
    out = np.empty((N, K, K))
    cdef double[:, :, ::1] o = out
    pa = np.empty((K, C))
    pb = np.empty((K, C))
    cdef double[:, ::1] A = pa
    cdef double[:, ::1] B = pb
    cdef Py_ssize_t i, a, bb, c
    cdef int dy, dx, k
    cdef double acc
    with nogil:
        for i in range(N):
            k = 0
            for dy in range(-half, half + 1):
                for dx in range(-half, half + 1):
                    _bilerp(fq, pq[i, 0] + dx, pq[i, 1] + dy, &A[k, 0])
                    _bilerp(ft, pc[i, 0] + dx, pc[i, 1] + dy, &B[k, 0])
                    k = k + 1
            for a in range(K):
                for bb in range(K):
                    acc = 0.0
                    for c in range(C):
                        acc = acc + A[a, c] * B[bb, c]
                    o[i, a, bb] = acc
    return out


def depth_window(depth, qd, pos, int radius, double floor_):
    d3 = np.ascontiguousarray(depth, dtype=np.float64)[:, :, None]
    cdef const double[:, :, ::1] f = d3
    cdef const double[::1] q = np.ascontiguousarray(qd, dtype=np.float64)
    cdef const double[:, ::1] p = np.ascontiguousarray(pos, dtype=np.float64)
    cdef Py_ssize_t N = p.shape[0]
    cdef int side = 2 * radius + 1
    out = np.empty((N, side * side))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t n
    cdef int dy, dx, k
    cdef double v, lq
    with nogil:
        for n in range(N):
            lq = log(q[n])
            k = 0
            for dy in range(-radius, radius + 1):
                for dx in range(-radius, radius + 1):
                    _bilerp(f, p[n, 0] + dx, p[n, 1] + dy, &v)
                    if v < floor_:
                        v = floor_
                    o[n, k] = lq - log(v)
                    k = k + 1
    return out


def project_rows(c, weight, bias, gain, offset, double eps):
    shape = tuple(c.shape)
    lead = shape[:len(shape) - 1]
    cdef const double[:, ::1] x = np.ascontiguousarray(c, dtype=np.float64).reshape(-1, shape[len(shape) - 1])
    cdef const double[:, ::1] w = np.ascontiguousarray(weight, dtype=np.float64)
    cdef const double[::1] b = np.ascontiguousarray(bias, dtype=np.float64)
    cdef const double[::1] g = np.ascontiguousarray(gain, dtype=np.float64)
    cdef const double[::1] be = np.ascontiguousarray(offset, dtype=np.float64)
    cdef Py_ssize_t R = x.shape[0], K = x.shape[1], P = w.shape[1]
    out = np.empty((R, P))
    cdef double[:, ::1] o = out
    cdef Py_ssize_t r, k, j
    cdef double mu, var, inv, y
    with nogil:
        for r in range(R):
            for j in range(P):
                o[r, j] = b[j]
            for k in range(K):
                for j in range(P):
                    o[r, j] = o[r, j] + x[r, k] * w[k, j]
            mu = 0.0
            for j in range(P):
                mu = mu + o[r, j]
            mu = mu / P
            var = 0.0
            for j in range(P):
                var = var + (o[r, j] - mu) * (o[r, j] - mu)
            var = var / P
            inv = 1.0 / sqrt(var + eps)
            for j in range(P):
                y = (o[r, j] - mu) * inv * g[j] + be[j]
                o[r, j] = y if y > 0.0 else 0.0
    return out.reshape(lead + (P,))


cdef void _conv_same(const double[:, :, ::1] x, const double[:, :, :, ::1] k,
                     double[:, :, ::1] y) noexcept nogil:
    # x: (I, h, w), k: (O, I, kh, kw), y: (O, h, w)
    cdef Py_ssize_t I = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t O = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t ph = kh // 2, pw = kw // 2
    cdef Py_ssize_t o, i, r, c, a, b, rr, cc
    cdef double acc
    for o in range(O):
        for r in range(h):
            for c in range(w):
                acc = 0.0
                for i in range(I):
                    for a in range(kh):
                        rr = r + a - ph
                        if rr < 0 or rr >= h:
                            continue
                        for b in range(kw):
                            cc = c + b - pw
                            if cc < 0 or cc >= w:
                                continue
                            acc = acc + k[o, i, a, b] * x[i, rr, cc]
                y[o, r, c] = acc


def dual_conv(c, k1, k2):
    cdef const double[:, :, ::1] cin = np.ascontiguousarray(c, dtype=np.float64)
    cdef const double[:, :, :, ::1] K1 = np.ascontiguousarray(k1, dtype=np.float64)
    cdef const double[:, :, :, ::1] K2 = np.ascontiguousarray(k2, dtype=np.float64)
    cdef Py_ssize_t N = cin.shape[0], nn = cin.shape[1]
    cdef Py_ssize_t n = <Py_ssize_t>(sqrt(<double>nn) + 0.5)
    cdef Py_ssize_t C2 = K2.shape[0]
    out = np.empty((N, C2 * nn))
    cdef double[:, ::1] o = out
    xa = np.empty((nn, n, n))
    ya = np.empty((nn, n, n))
    xb = np.empty((nn, n, n))
    za = np.empty((C2, n, n))
    cdef double[:, :, ::1] X = xa
    cdef double[:, :, ::1] Y = ya
    cdef double[:, :, ::1] X2 = xb
    cdef double[:, :, ::1] Z = za
    cdef Py_ssize_t p, a, b, j
    with nogil:
        for p in range(N):
            # channels = target offsets b, spatial = query offsets a
            for a in range(nn):
                for b in range(nn):
                    X[b, a // n, a % n] = cin[p, a, b]
            _conv_same(X, K1, Y)
            # Y[o=target cell, query grid] -> channels = query cells
            for b in range(nn):
                for a in range(nn):
                    X2[a, b // n, b % n] = Y[b, a // n, a % n]
            _conv_same(X2, K2, Z)
            for j in range(C2):
                for a in range(nn):
                    o[p, j * nn + a] = Z[j, a // n, a % n]
    return out


def knn4(tracked, query):
    cdef const long long[:, ::1] t = np.ascontiguousarray(tracked, dtype=np.int64)
    cdef const long long[:, ::1] q = np.ascontiguousarray(query, dtype=np.int64)
    cdef Py_ssize_t M = t.shape[0], Q = q.shape[0]
    out = np.empty((Q, 4), dtype=np.int64)
    cdef long long[:, ::1] o = out
    cdef long long bd[4]
    cdef long long bi[4]
    cdef long long d, dr, dc
    cdef Py_ssize_t i, m, s
    with nogil:
        for i in range(Q):
            for s in range(4):
                bd[s] = 0x7FFFFFFFFFFFFFFF
                bi[s] = -1
            for m in range(M):
                dr = q[i, 0] - t[m, 0]
                dc = q[i, 1] - t[m, 1]
                d = dr * dr + dc * dc
                # strict < keeps the lower index on ties (m ascends)
                if d < bd[3]:
                    s = 3
                    while s > 0 and d < bd[s - 1]:
                        bd[s] = bd[s - 1]
                        bi[s] = bi[s - 1]
                        s = s - 1
                    bd[s] = d
                    bi[s] = m
            for s in range(4):
                o[i, s] = bi[s]
    return out
