# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for the built-in models.

Model codes: 0 = linear (h = K (x - y), gamma = G y + u, D = K),
1 = logistic (h = -e^3 - e per coordinate, gamma = sin y, D = diag(-3 e^2 - 1)).
Arithmetic mirrors :mod:`satrack._fallback` operation by operation.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sin, isfinite
from libc.stdlib cimport malloc, free

cnp.import_array()

cdef enum:
    MAXD = 64

cdef double DIVERGENCE_SQ = 1e12


cdef inline void _h(int code, int d, const double* K, const double* w,
                    const double* y, double* out) noexcept nogil:
    cdef int i, j
    cdef double e, acc
    if code == 0:
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc = acc + K[i * d + j] * (w[j] - y[j])
            out[i] = acc
    else:
        for i in range(d):
            e = w[i] - y[i]
            out[i] = -(e * e * e) - e


cdef inline void _gamma(int code, int d, const double* G, const double* u,
                        const double* y, double* out) noexcept nogil:
    cdef int i, j
    cdef double acc
    if code == 0:
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc = acc + G[i * d + j] * y[j]
            out[i] = acc + u[i]
    else:
        for i in range(d):
            out[i] = sin(y[i])


cdef inline void _deriv(int code, int d, const double* K, const double* G,
                        const double* u, double rate, const double* s,
                        double* ds) noexcept nogil:
    # state layout: w[0:d], y[d:2d], Phi[2d:2d+d*d] row-major
    cdef int i, j, k
    cdef double acc, e
    cdef const double* w = s
    cdef const double* y = s + d
    cdef const double* P = s + 2 * d
    cdef double* dw = ds
    cdef double* dy = ds + d
    cdef double* dP = ds + 2 * d
    _gamma(code, d, G, u, y, dy)
    _h(code, d, K, w, y, dw)
    if rate != 0.0:
        for i in range(d):
            dw[i] = dw[i] + rate * dy[i]
    for i in range(d):
        dy[i] = rate * dy[i]
    if code == 0:
        for i in range(d):
            for k in range(d):
                acc = 0.0
                for j in range(d):
                    acc = acc + K[i * d + j] * P[j * d + k]
                dP[i * d + k] = acc
    else:
        for i in range(d):
            e = w[i] - y[i]
            e = -3.0 * e * e - 1.0
            for k in range(d):
                dP[i * d + k] = e * P[i * d + k]


cdef inline void _rk4(int code, int d, const double* K, const double* G,
                      const double* u, double rate, double* s, double dt,
                      double* k1, double* k2, double* k3, double* k4,
                      double* tmp) noexcept nogil:
    cdef int i, n = 2 * d + d * d
    cdef double half = 0.5 * dt
    cdef double sixth = dt / 6.0
    _deriv(code, d, K, G, u, rate, s, k1)
    for i in range(n):
        tmp[i] = s[i] + half * k1[i]
    _deriv(code, d, K, G, u, rate, tmp, k2)
    for i in range(n):
        tmp[i] = s[i] + half * k2[i]
    _deriv(code, d, K, G, u, rate, tmp, k3)
    for i in range(n):
        tmp[i] = s[i] + dt * k3[i]
    _deriv(code, d, K, G, u, rate, tmp, k4)
    for i in range(n):
        s[i] = s[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])


def flow(int code, const double[:, ::1] K, const double[:, ::1] G, const double[::1] u,
         double rate, const double[:, ::1] w0, const double[:, ::1] y0,
         const cnp.int64_t[::1] j0, const double[::1] th0, long J, double Th, double h):
    """Propagate each anchor from ``(j0 + th0) h`` to ``(J + Th) h``."""
    cdef Py_ssize_t B = w0.shape[0]
    cdef int d = w0.shape[1]
    cdef int n = 2 * d + d * d
    cdef Py_ssize_t b
    cdef long step, g
    cdef int i, j
    cdef double dt
    out_w = np.empty((B, d))
    out_y = np.empty((B, d))
    out_P = np.empty((B, d, d))
    cdef double[:, ::1] ow = out_w
    cdef double[:, ::1] oy = out_y
    cdef double[:, :, ::1] oP = out_P
    cdef double* buf = <double*> malloc(6 * n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* s = buf
    cdef double* k1 = buf + n
    cdef double* k2 = buf + 2 * n
    cdef double* k3 = buf + 3 * n
    cdef double* k4 = buf + 4 * n
    cdef double* tmp = buf + 5 * n
    cdef const double* Kp = &K[0, 0]
    cdef const double* Gp = &G[0, 0]
    cdef const double* up = &u[0]
    try:
        with nogil:
            for b in range(B):
                for i in range(d):
                    s[i] = w0[b, i]
                    s[d + i] = y0[b, i]
                    for j in range(d):
                        s[2 * d + i * d + j] = 1.0 if i == j else 0.0
                if j0[b] == J:
                    dt = (Th - th0[b]) * h
                    if dt > 0:
                        _rk4(code, d, Kp, Gp, up, rate, s, dt, k1, k2, k3, k4, tmp)
                else:
                    g = j0[b]
                    if th0[b] > 0:
                        _rk4(code, d, Kp, Gp, up, rate, s, (1.0 - th0[b]) * h, k1, k2, k3, k4, tmp)
                        g = g + 1
                    for step in range(g, J):
                        _rk4(code, d, Kp, Gp, up, rate, s, h, k1, k2, k3, k4, tmp)
                    if Th > 0:
                        _rk4(code, d, Kp, Gp, up, rate, s, Th * h, k1, k2, k3, k4, tmp)
                for i in range(d):
                    ow[b, i] = s[i]
                    oy[b, i] = s[d + i]
                    for j in range(d):
                        oP[b, i, j] = s[2 * d + i * d + j]
    finally:
        free(buf)
    return out_w, out_y, out_P


def sa_advance(int code, const double[:, ::1] K, double[:, ::1] x,
               const double[:, ::1] y_blk, const double[:, ::1] z_blk,
               const double[:, :, ::1] draws, double scale, const double[:, ::1] pert_blk,
               double a, double[:, ::1] stats):
    """In-place SA recursion for a block of steps; returns (-1, -1) or (step, replica)."""
    cdef Py_ssize_t R = x.shape[0]
    cdef int d = x.shape[1]
    cdef Py_ssize_t nk = y_blk.shape[0]
    cdef Py_ssize_t r, k
    cdef int i
    cdef double hv[MAXD]
    cdef double e, sq, se
    cdef long bad_k = -1
    cdef long bad_r = -1
    if d > MAXD:
        raise ValueError("dimension too large for the compiled kernel")
    cdef const double* Kp = &K[0, 0]
    with nogil:
        for r in range(R):
            for k in range(nk):
                sq = 0.0
                se = 0.0
                for i in range(d):
                    e = x[r, i] - z_blk[k, i]
                    se = se + e * e
                    sq = sq + x[r, i] * x[r, i]
                stats[k, 0] += se
                stats[k, 1] += sq
                stats[k, 2] += sq * sq
                _h(code, d, Kp, &x[r, 0], &y_blk[k, 0], hv)
                sq = 0.0
                for i in range(d):
                    x[r, i] = x[r, i] + a * (hv[i] + scale * draws[r, k, i] + pert_blk[k, i])
                    sq = sq + x[r, i] * x[r, i]
                if not (sq <= DIVERGENCE_SQ):
                    bad_k = k + 1
                    bad_r = r
                    break
            if bad_k >= 0:
                break
    return bad_k, bad_r


def slow_path(int code, const double[:, ::1] G, const double[::1] u, double rate,
              const double[::1] y0, long n_steps, double h):
    """RK4 samples of dy/dt = rate * gamma(y) at k h."""
    cdef int d = y0.shape[0]
    cdef int i
    cdef long k
    cdef double half = 0.5 * h
    cdef double sixth = h / 6.0
    out = np.empty((n_steps + 1, d))
    cdef double[:, ::1] o = out
    cdef double y[MAXD]
    cdef double t[MAXD]
    cdef double k1[MAXD]
    cdef double k2[MAXD]
    cdef double k3[MAXD]
    cdef double k4[MAXD]
    if d > MAXD:
        raise ValueError("dimension too large for the compiled kernel")
    cdef const double* Gp = &G[0, 0]
    cdef const double* up = &u[0]
    for i in range(d):
        y[i] = y0[i]
        o[0, i] = y[i]
    with nogil:
        for k in range(n_steps):
            if rate == 0.0:
                for i in range(d):
                    o[k + 1, i] = y[i]
                continue
            _gamma(code, d, Gp, up, y, k1)
            for i in range(d):
                k1[i] = rate * k1[i]
                t[i] = y[i] + half * k1[i]
            _gamma(code, d, Gp, up, t, k2)
            for i in range(d):
                k2[i] = rate * k2[i]
                t[i] = y[i] + half * k2[i]
            _gamma(code, d, Gp, up, t, k3)
            for i in range(d):
                k3[i] = rate * k3[i]
                t[i] = y[i] + h * k3[i]
            _gamma(code, d, Gp, up, t, k4)
            for i in range(d):
                k4[i] = rate * k4[i]
                y[i] = y[i] + sixth * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])
                o[k + 1, i] = y[i]
    return out
