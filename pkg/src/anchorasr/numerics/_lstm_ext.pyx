# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM recurrence kernels; same contract as ``_lstm_py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef inline double _sigmoid(double x) noexcept nogil:
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    cdef double e = exp(x)
    return e / (1.0 + e)


cdef inline double _tanh(double x) noexcept nogil:
    if x >= 0:
        return 2.0 / (1.0 + exp(-2.0 * x)) - 1.0
    return 1.0 - 2.0 / (1.0 + exp(2.0 * x))


cdef inline void _matmul(double* a, double* b, double* c, int m, int k, int n,
                         double beta) noexcept nogil:
    # row-major c[m, n] = a[m, k] @ b[k, n] + beta * c
    cdef char trans = b'N'
    cdef double alpha = 1.0
    dgemm(&trans, &trans, &n, &m, &k, &alpha, b, &n, a, &k, &beta, c, &n)


cdef inline void _matmul_bt(double* a, double* b, double* c, int m, int k, int n) noexcept nogil:
    # row-major c[m, n] = a[m, k] @ b[n, k].T
    cdef char ta = b'N'
    cdef char tb = b'T'
    cdef double alpha = 1.0, beta = 0.0
    dgemm(&tb, &ta, &n, &m, &k, &alpha, b, &k, a, &k, &beta, c, &n)


cdef inline void _matmul_at(double* a, double* b, double* c, int m, int k, int n) noexcept nogil:
    # row-major c[m, n] += a[k, m].T @ b[k, n]
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double alpha = 1.0, beta = 1.0
    dgemm(&tb, &ta, &n, &m, &k, &alpha, b, &n, a, &m, &beta, c, &n)


def recurrence_forward(double[:, :, ::1] xw, double[:, ::1] U):
    cdef Py_ssize_t B = xw.shape[0], T = xw.shape[1], G = xw.shape[2]
    cdef Py_ssize_t H = G // 4
    hs_a = np.empty((B, T, H))
    cs_a = np.empty((B, T, H))
    acts_a = np.empty((B, T, G))
    tcs_a = np.empty((B, T, H))
    z_a = np.empty((B, G))
    h_a = np.zeros((B, H))
    c_a = np.zeros((B, H))
    cdef double[:, :, ::1] hs = hs_a, cs = cs_a, acts = acts_a, tcs = tcs_a
    cdef double[:, ::1] z = z_a, h = h_a, c = c_a
    cdef Py_ssize_t t, b, j
    cdef double gi, gf, gg, go, cc, tc
    with nogil:
        for t in range(T):
            for b in range(B):
                for j in range(G):
                    z[b, j] = xw[b, t, j]
            if t > 0:
                _matmul(&h[0, 0], &U[0, 0], &z[0, 0], <int>B, <int>H, <int>G, 1.0)
            for b in range(B):
                for j in range(H):
                    gi = _sigmoid(z[b, j])
                    gf = _sigmoid(z[b, H + j])
                    gg = _tanh(z[b, 2 * H + j])
                    go = _sigmoid(z[b, 3 * H + j])
                    cc = gf * c[b, j] + gi * gg
                    tc = _tanh(cc)
                    c[b, j] = cc
                    h[b, j] = go * tc
                    hs[b, t, j] = go * tc
                    cs[b, t, j] = cc
                    tcs[b, t, j] = tc
                    acts[b, t, j] = gi
                    acts[b, t, H + j] = gf
                    acts[b, t, 2 * H + j] = gg
                    acts[b, t, 3 * H + j] = go
    return hs_a, (cs_a, acts_a, tcs_a)


def recurrence_backward(double[:, :, ::1] dhs, double[:, ::1] U, hs_in, cache):
    cs_a, acts_a, tcs_a = cache
    cdef double[:, :, ::1] hs = hs_in, cs = cs_a, acts = acts_a, tcs = tcs_a
    cdef Py_ssize_t B = hs.shape[0], T = hs.shape[1], H = hs.shape[2]
    cdef Py_ssize_t G = 4 * H
    dxw_a = np.empty((B, T, G))
    dU_a = np.zeros((H, G))
    dh_a = np.zeros((B, H))
    dc_a = np.zeros((B, H))
    dz_a = np.empty((B, G))
    hp_a = np.empty((B, H))
    cdef double[:, :, ::1] dxw = dxw_a
    cdef double[:, ::1] dU = dU_a, dh_next = dh_a, dc_next = dc_a, dz = dz_a, hp = hp_a
    cdef Py_ssize_t t, b, j
    cdef double gi, gf, gg, go, tc, dh, dc, cp
    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    gi = acts[b, t, j]
                    gf = acts[b, t, H + j]
                    gg = acts[b, t, 2 * H + j]
                    go = acts[b, t, 3 * H + j]
                    tc = tcs[b, t, j]
                    cp = cs[b, t - 1, j] if t > 0 else 0.0
                    dh = dhs[b, t, j] + dh_next[b, j]
                    dc = dh * go * (1.0 - tc * tc) + dc_next[b, j]
                    dz[b, j] = dc * gg * gi * (1.0 - gi)
                    dz[b, H + j] = dc * cp * gf * (1.0 - gf)
                    dz[b, 2 * H + j] = dc * gi * (1.0 - gg * gg)
                    dz[b, 3 * H + j] = dh * tc * go * (1.0 - go)
                    dc_next[b, j] = dc * gf
                    if t > 0:
                        hp[b, j] = hs[b, t - 1, j]
                for j in range(G):
                    dxw[b, t, j] = dz[b, j]
            if t > 0:
                _matmul_at(&hp[0, 0], &dz[0, 0], &dU[0, 0], <int>H, <int>B, <int>G)
            _matmul_bt(&dz[0, 0], &U[0, 0], &dh_next[0, 0], <int>B, <int>G, <int>H)
    return dxw_a, dU_a
