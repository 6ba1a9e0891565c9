# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops: direct 1-D convolution and peak scanning.

Every function here has a numpy twin in ``peakcgan._npkernels`` with the same
signature; ``peakcgan.kernels`` picks one at import time.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv1d_forward(const double[:, :, ::1] x, const double[:, :, ::1] w,
                   int stride, int padding):
    cdef Py_ssize_t n_batch = x.shape[0], c_in = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t t_out = (length + 2 * padding - k) // stride + 1
    out = np.zeros((n_batch, c_out, t_out), dtype=np.float64)
    cdef double[:, :, ::1] y = out
    cdef Py_ssize_t n, o, c, t, j, src, start
    cdef double acc
    for n in range(n_batch):
        for o in range(c_out):
            for t in range(t_out):
                start = t * stride - padding
                acc = 0.0
                for c in range(c_in):
                    for j in range(k):
                        src = start + j
                        if 0 <= src < length:
                            acc = acc + w[o, c, j] * x[n, c, src]
                y[n, o, t] = acc
    return out


def conv1d_backward(const double[:, :, ::1] x, const double[:, :, ::1] w,
                    const double[:, :, ::1] dy, int stride, int padding):
    cdef Py_ssize_t n_batch = x.shape[0], c_in = x.shape[1], length = x.shape[2]
    cdef Py_ssize_t c_out = w.shape[0], k = w.shape[2], t_out = dy.shape[2]
    dx_arr = np.zeros((n_batch, c_in, length), dtype=np.float64)
    dw_arr = np.zeros((c_out, c_in, k), dtype=np.float64)
    cdef double[:, :, ::1] dx = dx_arr
    cdef double[:, :, ::1] dw = dw_arr
    cdef Py_ssize_t n, o, c, t, j, src, start
    cdef double g
    for n in range(n_batch):
        for o in range(c_out):
            for t in range(t_out):
                g = dy[n, o, t]
                if g == 0.0:
                    continue
                start = t * stride - padding
                for c in range(c_in):
                    for j in range(k):
                        src = start + j
                        if 0 <= src < length:
                            dx[n, c, src] += g * w[o, c, j]
                            dw[o, c, j] += g * x[n, c, src]
    return dx_arr, dw_arr


def local_maxima(const double[::1] x):
    """Indices of strict local maxima; flat tops report their middle sample."""
    cdef Py_ssize_t n = x.shape[0], i = 1, ahead
    out = []
    while i < n - 1:
        if x[i - 1] < x[i]:
            ahead = i + 1
            while ahead < n - 1 and x[ahead] == x[i]:
                ahead += 1
            if x[ahead] < x[i]:
                out.append((i + ahead - 1) // 2)
                i = ahead
        i += 1
    return np.asarray(out, dtype=np.intp)


def peak_prominences(const double[::1] x, const cnp.intp_t[::1] peaks):
    cdef Py_ssize_t n = x.shape[0], m = peaks.shape[0], p, i, peak, left_base, right_base
    cdef double height, left_min, right_min
    prom_arr = np.empty(m, dtype=np.float64)
    left_arr = np.empty(m, dtype=np.intp)
    right_arr = np.empty(m, dtype=np.intp)
    cdef double[::1] prom = prom_arr
    cdef cnp.intp_t[::1] left = left_arr
    cdef cnp.intp_t[::1] right = right_arr
    for p in range(m):
        peak = peaks[p]
        height = x[peak]
        left_min = height
        left_base = peak
        i = peak
        while i >= 0 and x[i] <= height:
            if x[i] < left_min:
                left_min = x[i]
                left_base = i
            i -= 1
        right_min = height
        right_base = peak
        i = peak
        while i < n and x[i] <= height:
            if x[i] < right_min:
                right_min = x[i]
                right_base = i
            i += 1
        left[p] = left_base
        right[p] = right_base
        prom[p] = height - (left_min if left_min > right_min else right_min)
    return prom_arr, left_arr, right_arr


def support_bounds(const double[::1] x, const cnp.intp_t[::1] peaks,
                   const double[::1] reference):
    """First sample walking outward from each peak whose value is <= reference."""
    cdef Py_ssize_t n = x.shape[0], m = peaks.shape[0], p, i
    lo_arr = np.empty(m, dtype=np.intp)
    hi_arr = np.empty(m, dtype=np.intp)
    cdef cnp.intp_t[::1] lo = lo_arr
    cdef cnp.intp_t[::1] hi = hi_arr
    for p in range(m):
        i = peaks[p]
        while i > 0 and x[i] > reference[p]:
            i -= 1
        lo[p] = i
        i = peaks[p]
        while i < n - 1 and x[i] > reference[p]:
            i += 1
        hi[p] = i
    return lo_arr, hi_arr
