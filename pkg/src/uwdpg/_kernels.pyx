# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled patch-correction kernel (see ``uwdpg.kernels``)."""
import numpy as np
from libc.math cimport sqrt


def patch_correction(const double complex[::1] r,
                     const long long[::1] idx,
                     const long long[::1] idx_ptr,
                     const double complex[::1] blocks,
                     const long long[::1] blk_ptr,
                     double skip_tol,
                     double complex[::1] out):
    cdef Py_ssize_t n_patch = idx_ptr.shape[0] - 1
    cdef Py_ssize_t k, i, j, start, m, b0
    cdef double complex acc
    cdef double nrm
    cdef double complex[::1] loc = np.empty(max(1, _max_size(idx_ptr)), dtype=np.complex128)
    for k in range(n_patch):
        start = idx_ptr[k]
        m = idx_ptr[k + 1] - start
        nrm = 0.0
        for i in range(m):
            loc[i] = r[idx[start + i]]
            nrm += loc[i].real * loc[i].real + loc[i].imag * loc[i].imag
        if sqrt(nrm) <= skip_tol:
            continue
        b0 = blk_ptr[k]
        for i in range(m):
            acc = 0.0
            for j in range(m):
                acc = acc + blocks[b0 + i * m + j] * loc[j]
            out[idx[start + i]] += acc
    return np.asarray(out)


cdef Py_ssize_t _max_size(const long long[::1] idx_ptr):
    cdef Py_ssize_t k, best = 0
    for k in range(idx_ptr.shape[0] - 1):
        if idx_ptr[k + 1] - idx_ptr[k] > best:
            best = idx_ptr[k + 1] - idx_ptr[k]
    return best
