# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: 3x3 'same' convolution, tap resampling, nearest-centroid search.

Every function here has a numpy twin in ``_pykernels`` with the same signature.
Arrays are float64 and C-contiguous; callers in ``_backend`` enforce that.
"""

import numpy as np
cimport numpy as cnp
from scipy.linalg.cython_blas cimport dgemm

cnp.import_array()


cdef void _gemm_rowmajor(char *ta, char *tb, int m, int n, int k,
                         double *a, int lda, double *b, int ldb,
                         double beta, double *c, int ldc) noexcept nogil:
    cdef double one = 1.0
    dgemm(ta, tb, &m, &n, &k, &one, a, &lda, b, &ldb, &beta, c, &ldc)


cdef void _im2col(const double[:, :, :, ::1] x, double[:, ::1] cols) noexcept nogil:
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t b, i, j, ky, kx, c, yy, xx, row, col0
    for b in range(B):
        for i in range(H):
            for j in range(W):
                row = (b * H + i) * W + j
                for ky in range(3):
                    yy = i + ky - 1
                    for kx in range(3):
                        xx = j + kx - 1
                        col0 = (ky * 3 + kx) * C
                        if yy < 0 or yy >= H or xx < 0 or xx >= W:
                            for c in range(C):
                                cols[row, col0 + c] = 0.0
                        else:
                            for c in range(C):
                                cols[row, col0 + c] = x[b, yy, xx, c]


def conv3x3_forward(const double[:, :, :, ::1] x, const double[:, ::1] w, const double[::1] bias):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t K = 9 * C, Co = w.shape[1], P = B * H * W
    cdef Py_ssize_t p, o
    if w.shape[0] != K or bias.shape[0] != Co:
        raise ValueError("weight/bias shape does not match input channels")
    cols_arr = np.empty((P, K), dtype=np.float64)
    out_arr = np.empty((B, H, W, Co), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, :, :, ::1] out = out_arr
    cdef double *outp = &out[0, 0, 0, 0]
    with nogil:
        _im2col(x, cols)
        for p in range(P):
            for o in range(Co):
                outp[p * Co + o] = bias[o]
        _gemm_rowmajor(b"N", b"N", <int>Co, <int>P, <int>K,
                       <double *>&w[0, 0], <int>Co, &cols[0, 0], <int>K,
                       1.0, outp, <int>Co)
    return out_arr


def conv3x3_backward(const double[:, :, :, ::1] x, const double[:, ::1] w,
                     const double[:, :, :, ::1] dy):
    cdef Py_ssize_t B = x.shape[0], H = x.shape[1], W = x.shape[2], C = x.shape[3]
    cdef Py_ssize_t K = 9 * C, Co = w.shape[1], P = B * H * W
    cdef Py_ssize_t b, i, j, ky, kx, c, yy, xx, row, col0, p, o
    cols_arr = np.empty((P, K), dtype=np.float64)
    dcols_arr = np.empty((P, K), dtype=np.float64)
    dw_arr = np.empty((K, Co), dtype=np.float64)
    db_arr = np.zeros(Co, dtype=np.float64)
    dx_arr = np.zeros((B, H, W, C), dtype=np.float64)
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] dcols = dcols_arr
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, :, :, ::1] dx = dx_arr
    cdef const double *dyp = &dy[0, 0, 0, 0]
    with nogil:
        _im2col(x, cols)
        _gemm_rowmajor(b"N", b"T", <int>Co, <int>K, <int>P,
                       <double *>dyp, <int>Co, &cols[0, 0], <int>K,
                       0.0, &dw[0, 0], <int>Co)
        _gemm_rowmajor(b"T", b"N", <int>K, <int>P, <int>Co,
                       <double *>&w[0, 0], <int>Co, <double *>dyp, <int>Co,
                       0.0, &dcols[0, 0], <int>K)
        for p in range(P):
            for o in range(Co):
                db[o] += dyp[p * Co + o]
        for b in range(B):
            for i in range(H):
                for j in range(W):
                    row = (b * H + i) * W + j
                    for ky in range(3):
                        yy = i + ky - 1
                        if yy < 0 or yy >= H:
                            continue
                        for kx in range(3):
                            xx = j + kx - 1
                            if xx < 0 or xx >= W:
                                continue
                            col0 = (ky * 3 + kx) * C
                            for c in range(C):
                                dx[b, yy, xx, c] += dcols[row, col0 + c]
    return dx_arr, dw_arr, db_arr


def apply_taps(const double[:, ::1] src, const cnp.int64_t[:, ::1] index,
               const double[:, ::1] weight):
    """out[i, :] = sum_k weight[i, k] * src[index[i, k], :]"""
    cdef Py_ssize_t n_out = index.shape[0], taps = index.shape[1], m = src.shape[1]
    cdef Py_ssize_t i, k, j, r
    cdef double wk
    out_arr = np.zeros((n_out, m), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    with nogil:
        for i in range(n_out):
            for k in range(taps):
                wk = weight[i, k]
                if wk == 0.0:
                    continue
                r = index[i, k]
                for j in range(m):
                    out[i, j] += wk * src[r, j]
    return out_arr


def nearest_centroid(const double[:, ::1] x, const double[:, ::1] centroids):
    """Squared-Euclidean nearest centroid per row; ties go to the lowest index."""
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1], k = centroids.shape[0]
    cdef Py_ssize_t i, j, t, best
    cdef double acc, diff, bestd
    labels_arr = np.empty(n, dtype=np.int64)
    dist_arr = np.empty(n, dtype=np.float64)
    cdef cnp.int64_t[::1] labels = labels_arr
    cdef double[::1] dist = dist_arr
    with nogil:
        for i in range(n):
            best = 0
            bestd = 0.0
            for j in range(k):
                acc = 0.0
                for t in range(d):
                    diff = x[i, t] - centroids[j, t]
                    acc += diff * diff
                if j == 0 or acc < bestd:
                    bestd = acc
                    best = j
            labels[i] = best
            dist[i] = bestd
    return labels_arr, dist_arr
