# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled CSR products. Inputs are contiguous int64 / float64 arrays."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def csr_matvec(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
               const double[::1] data, const double[::1] x, Py_ssize_t nrows):
    cdef double[::1] out = np.empty(nrows, dtype=np.float64)
    cdef Py_ssize_t i, k
    cdef double acc
    with nogil:
        for i in range(nrows):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc = acc + data[k] * x[indices[k]]
            out[i] = acc
    return np.asarray(out)


def csr_rmatvec(const cnp.int64_t[::1] indptr, const cnp.int64_t[::1] indices,
                const double[::1] data, const double[::1] x, Py_ssize_t ncols):
    cdef double[::1] out = np.zeros(ncols, dtype=np.float64)
    cdef Py_ssize_t nrows = indptr.shape[0] - 1
    cdef Py_ssize_t i, k
    cdef double xi
    with nogil:
        for i in range(nrows):
            xi = x[i]
            for k in range(indptr[i], indptr[i + 1]):
                out[indices[k]] += data[k] * xi
    return np.asarray(out)
