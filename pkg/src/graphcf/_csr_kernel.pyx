"""Compiled CSR kernels for the propagation hot loop."""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()


def csr_spmm(const cnp.int64_t[::1] row_offsets,
             const cnp.int64_t[::1] col_indices,
             const double[::1] values,
             const double[:, ::1] x,
             double[:, ::1] out):
    """Accumulate a CSR(n_rows x n_cols) times dense(n_cols x d) product into out.

    out must be zero-initialised by the caller. Entries within a row are
    accumulated in storage order, so results are deterministic.
    """
    cdef Py_ssize_t n_rows = out.shape[0]
    cdef Py_ssize_t d = out.shape[1]
    cdef Py_ssize_t r, p, k
    cdef cnp.int64_t c
    cdef double v
    with nogil:
        for r in range(n_rows):
            for p in range(row_offsets[r], row_offsets[r + 1]):
                c = col_indices[p]
                v = values[p]
                for k in range(d):
                    out[r, k] += v * x[c, k]
