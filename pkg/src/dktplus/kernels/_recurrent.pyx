# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled LSTM / vanilla-RNN recurrences.

Same signatures, layouts and semantics as ``dktplus.kernels._py``. The time
loop and the fused element-wise gate arithmetic run without the GIL; the
per-step matrix products go straight to BLAS ``dgemm``.
"""

import numpy as np

from libc.math cimport exp, expm1, fabs
from libc.string cimport memcpy
from scipy.linalg.cython_blas cimport dgemm


cdef inline double _sigmoid(double x) noexcept nogil:
    cdef double e
    if x >= 0:
        return 1.0 / (1.0 + exp(-x))
    e = exp(x)
    return e / (1.0 + e)


cdef inline double _tanh(double x) noexcept nogil:
    # one expm1 instead of libm tanh; accurate near 0 and saturates cleanly
    cdef double e
    if x > 20.0:
        return 1.0
    if x < -20.0:
        return -1.0
    e = expm1(-2.0 * fabs(x))
    return -e / (e + 2.0) if x >= 0 else e / (e + 2.0)


cdef inline void _gemm_abt_acc(int m, int n, int k, double* A, double* Bm, double* Cm) noexcept nogil:
    # row-major C[m, n] += A[m, k] @ B[n, k].T
    cdef char ta = b'T'
    cdef char tb = b'N'
    cdef double one = 1.0
    dgemm(&ta, &tb, &n, &m, &k, &one, Bm, &k, A, &k, &one, Cm, &n)


cdef inline void _gemm_ab(int m, int n, int k, double* A, double* Bm, double* Cm) noexcept nogil:
    # row-major C[m, n] = A[m, k] @ B[k, n]
    cdef char ta = b'N'
    cdef char tb = b'N'
    cdef double one = 1.0
    cdef double zero = 0.0
    dgemm(&ta, &tb, &n, &m, &k, &one, Bm, &n, A, &k, &zero, Cm, &n)


def _check(Py_ssize_t T, Py_ssize_t B, Py_ssize_t H):
    if T < 1 or B < 1 or H < 1:
        raise ValueError("empty recurrence")


def lstm_forward(const double[:, :, ::1] Zx, const double[:, ::1] Wh):
    cdef Py_ssize_t T = Zx.shape[0]
    cdef Py_ssize_t B = Zx.shape[1]
    cdef Py_ssize_t H4 = Zx.shape[2]
    cdef Py_ssize_t H = H4 // 4
    _check(T, B, H)
    if Wh.shape[0] != H4 or Wh.shape[1] != H:
        raise ValueError("recurrent weight shape mismatch")

    G_arr = np.empty((T, B, H4))
    C_arr = np.empty((T, B, H))
    TC_arr = np.empty((T, B, H))
    Hs_arr = np.empty((T, B, H))
    cdef double[:, :, ::1] G = G_arr
    cdef double[:, :, ::1] C = C_arr
    cdef double[:, :, ::1] TC = TC_arr
    cdef double[:, :, ::1] Hs = Hs_arr
    cdef Py_ssize_t t, b, j
    cdef double f, i, o, g, c, cp, tc

    with nogil:
        for t in range(T):
            memcpy(&G[t, 0, 0], &Zx[t, 0, 0], B * H4 * sizeof(double))
            if t > 0:
                _gemm_abt_acc(<int>B, <int>H4, <int>H, &Hs[t - 1, 0, 0], <double*>&Wh[0, 0], &G[t, 0, 0])
            for b in range(B):
                for j in range(H):
                    f = _sigmoid(G[t, b, j])
                    i = _sigmoid(G[t, b, H + j])
                    o = _sigmoid(G[t, b, 2 * H + j])
                    g = _tanh(G[t, b, 3 * H + j])
                    G[t, b, j] = f
                    G[t, b, H + j] = i
                    G[t, b, 2 * H + j] = o
                    G[t, b, 3 * H + j] = g
                    cp = C[t - 1, b, j] if t > 0 else 0.0
                    c = f * cp + i * g
                    tc = _tanh(c)
                    C[t, b, j] = c
                    TC[t, b, j] = tc
                    Hs[t, b, j] = o * tc
    return G_arr, C_arr, TC_arr, Hs_arr


def lstm_backward(const double[:, :, ::1] dHs, const double[:, :, ::1] G,
                  const double[:, :, ::1] C, const double[:, :, ::1] TC,
                  const double[:, ::1] Wh):
    cdef Py_ssize_t T = dHs.shape[0]
    cdef Py_ssize_t B = dHs.shape[1]
    cdef Py_ssize_t H = dHs.shape[2]
    cdef Py_ssize_t H4 = 4 * H
    _check(T, B, H)

    dZ_arr = np.empty((T, B, H4))
    dh_arr = np.zeros((B, H))
    dc_arr = np.zeros((B, H))
    cdef double[:, :, ::1] dZ = dZ_arr
    cdef double[:, ::1] dh_next = dh_arr
    cdef double[:, ::1] dc_next = dc_arr
    cdef Py_ssize_t t, b, j
    cdef double f, i, o, g, tc, dh, dc, cp

    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    f = G[t, b, j]
                    i = G[t, b, H + j]
                    o = G[t, b, 2 * H + j]
                    g = G[t, b, 3 * H + j]
                    tc = TC[t, b, j]
                    dh = dHs[t, b, j] + dh_next[b, j]
                    dc = dc_next[b, j] + dh * o * (1.0 - tc * tc)
                    cp = C[t - 1, b, j] if t > 0 else 0.0
                    dZ[t, b, j] = dc * cp * f * (1.0 - f)
                    dZ[t, b, H + j] = dc * g * i * (1.0 - i)
                    dZ[t, b, 2 * H + j] = dh * tc * o * (1.0 - o)
                    dZ[t, b, 3 * H + j] = dc * i * (1.0 - g * g)
                    dc_next[b, j] = dc * f
            if t > 0:
                _gemm_ab(<int>B, <int>H, <int>H4, &dZ[t, 0, 0], <double*>&Wh[0, 0], &dh_next[0, 0])
    return dZ_arr


def rnn_forward(const double[:, :, ::1] Zx, const double[:, ::1] Wh):
    cdef Py_ssize_t T = Zx.shape[0]
    cdef Py_ssize_t B = Zx.shape[1]
    cdef Py_ssize_t H = Zx.shape[2]
    _check(T, B, H)
    if Wh.shape[0] != H or Wh.shape[1] != H:
        raise ValueError("recurrent weight shape mismatch")

    Hs_arr = np.empty((T, B, H))
    cdef double[:, :, ::1] Hs = Hs_arr
    cdef Py_ssize_t t, b, j

    with nogil:
        for t in range(T):
            memcpy(&Hs[t, 0, 0], &Zx[t, 0, 0], B * H * sizeof(double))
            if t > 0:
                _gemm_abt_acc(<int>B, <int>H, <int>H, &Hs[t - 1, 0, 0], <double*>&Wh[0, 0], &Hs[t, 0, 0])
            for b in range(B):
                for j in range(H):
                    Hs[t, b, j] = _tanh(Hs[t, b, j])
    return Hs_arr


def rnn_backward(const double[:, :, ::1] dHs, const double[:, :, ::1] Hs,
                 const double[:, ::1] Wh):
    cdef Py_ssize_t T = dHs.shape[0]
    cdef Py_ssize_t B = dHs.shape[1]
    cdef Py_ssize_t H = dHs.shape[2]
    _check(T, B, H)

    dZ_arr = np.empty((T, B, H))
    dh_arr = np.zeros((B, H))
    cdef double[:, :, ::1] dZ = dZ_arr
    cdef double[:, ::1] dh_next = dh_arr
    cdef Py_ssize_t t, b, j
    cdef double h

    with nogil:
        for t in range(T - 1, -1, -1):
            for b in range(B):
                for j in range(H):
                    h = Hs[t, b, j]
                    dZ[t, b, j] = (dHs[t, b, j] + dh_next[b, j]) * (1.0 - h * h)
            if t > 0:
                _gemm_ab(<int>B, <int>H, <int>H, &dZ[t, 0, 0], <double*>&Wh[0, 0], &dh_next[0, 0])
    return dZ_arr
