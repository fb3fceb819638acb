# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled bit-plane kernels.

Mirrors ``_pykernels`` function for function. Rows are split across OpenMP
threads; each output element is written by exactly one thread, so results do
not depend on the thread count.
"""

from cython.parallel cimport prange
from libc.stdint cimport int64_t, uint64_t

cdef extern from "bitops.h" nogil:
    int64_t bw_xor_popcount(const uint64_t* a, const uint64_t* b, Py_ssize_t words)
    void bw_gemm_xnor_rows(const uint64_t* xp, const double* xs, int kx, Py_ssize_t m,
                           const uint64_t* wp, const double* ws, int kw, Py_ssize_t p,
                           Py_ssize_t words, Py_ssize_t n, double* out,
                           Py_ssize_t i0, Py_ssize_t i1)
    void bw_quantize_row_f64(const double* x, Py_ssize_t n, const double* scales, int K,
                             uint64_t* out, Py_ssize_t stride)
    void bw_quantize_row_f32(const float* x, Py_ssize_t n, const double* scales, int K,
                             uint64_t* out, Py_ssize_t stride)

ctypedef fused real:
    float
    double

cdef enum:
    ROW_BLOCK = 16


def pack_bits(const unsigned char[:, ::1] bits, uint64_t[:, ::1] out):
    cdef Py_ssize_t rows = bits.shape[0], n = bits.shape[1]
    cdef Py_ssize_t i, c
    out[:, :] = 0
    for i in range(rows):
        for c in range(n):
            if bits[i, c]:
                out[i, c >> 6] |= (<uint64_t>1) << (c & 63)


def quantize_pack(const real[:, ::1] x, const double[::1] scales,
                  uint64_t[:, :, ::1] out, int threads=1):
    cdef Py_ssize_t rows = x.shape[0], n = x.shape[1]
    cdef int K = scales.shape[0]
    cdef Py_ssize_t i, stride = out.shape[1] * out.shape[2]
    if K > 8:
        raise ValueError("at most 8 levels supported")
    if rows == 0 or K == 0 or n == 0:
        return
    for i in prange(rows, nogil=True, num_threads=threads, schedule="static"):
        if real is float:
            bw_quantize_row_f32(&x[i, 0], n, &scales[0], K, &out[0, i, 0], stride)
        else:
            bw_quantize_row_f64(&x[i, 0], n, &scales[0], K, &out[0, i, 0], stride)


def xnor_dot(const uint64_t[::1] a, const uint64_t[::1] b, Py_ssize_t n):
    if a.shape[0] == 0:
        return n
    return n - 2 * bw_xor_popcount(&a[0], &b[0], a.shape[0])


def gemm_xnor(const uint64_t[:, :, ::1] xp, const double[::1] xs,
              const uint64_t[:, :, ::1] wp, const double[::1] ws,
              Py_ssize_t n, double[:, ::1] out, int threads=1):
    cdef int kx = xp.shape[0], kw = wp.shape[0]
    cdef Py_ssize_t m = xp.shape[1], p = wp.shape[1], words = xp.shape[2]
    cdef Py_ssize_t b, nblocks = (m + ROW_BLOCK - 1) // ROW_BLOCK
    if m == 0 or p == 0:
        return
    if kx == 0 or kw == 0:
        out[:, :] = 0.0
        return
    for b in prange(nblocks, nogil=True, num_threads=threads, schedule="static"):
        bw_gemm_xnor_rows(&xp[0, 0, 0], &xs[0], kx, m, &wp[0, 0, 0], &ws[0], kw, p,
                          words, n, &out[0, 0],
                          b * ROW_BLOCK, min((b + 1) * ROW_BLOCK, m))


def gemm_dense(const real[:, ::1] a, const real[:, ::1] b, real[:, ::1] out,
               int threads=1):
    cdef Py_ssize_t m = a.shape[0], n = a.shape[1], p = b.shape[1]
    cdef Py_ssize_t i, k, j
    cdef real aik
    for i in prange(m, nogil=True, num_threads=threads, schedule="static"):
        for j in range(p):
            out[i, j] = 0
        for k in range(n):
            aik = a[i, k]
            for j in range(p):
                out[i, j] += aik * b[k, j]
