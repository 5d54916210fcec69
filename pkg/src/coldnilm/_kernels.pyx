# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for ROI extraction and aggregate synthesis.

Every routine here has a numpy twin in ``_pykernels`` that performs the same
floating-point operations in the same order, so both backends produce
bit-identical results.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def sliding_rms(const double[::1] x, Py_ssize_t win):
    cdef Py_ssize_t n = x.shape[0]
    cdef Py_ssize_t i, last
    cdef double ms
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    if n == 0:
        return out_arr
    if win > n:
        win = n
    csum_arr = np.empty(n + 1, dtype=np.float64)
    cdef double[::1] c = csum_arr
    c[0] = 0.0
    for i in range(n):
        c[i + 1] = c[i] + x[i] * x[i]
    last = n - win
    for i in range(last + 1):
        ms = (c[i + win] - c[i]) / win
        if ms < 0.0:
            ms = 0.0
        out[i] = sqrt(ms)
    for i in range(last + 1, n):
        out[i] = out[last]
    return out_arr


def longest_run(const unsigned char[::1] mask):
    cdef Py_ssize_t n = mask.shape[0]
    cdef Py_ssize_t i, start = -1, best_start = 0, best_len = 0
    for i in range(n):
        if mask[i]:
            if start < 0:
                start = i
        elif start >= 0:
            if i - start > best_len:
                best_len = i - start
                best_start = start
            start = -1
    if start >= 0 and n - start > best_len:
        best_len = n - start
        best_start = start
    return best_start, best_start + best_len


def lag_correlation(const double[::1] ref, const double[::1] v,
                    Py_ssize_t start, const long long[::1] lags):
    cdef Py_ssize_t p = ref.shape[0]
    cdef Py_ssize_t length = v.shape[0]
    cdef Py_ssize_t n_lags = lags.shape[0]
    cdef Py_ssize_t j, n, idx
    cdef double acc
    out_arr = np.empty(n_lags, dtype=np.float64)
    cdef double[::1] out = out_arr
    with nogil:
        for j in range(n_lags):
            acc = 0.0
            for n in range(p):
                idx = (n + lags[j] - start) % length
                if idx < 0:
                    idx += length
                acc = acc + ref[n] * v[idx]
            out[j] = acc
    return out_arr


def add_shifted(double[::1] out, const double[::1] comp,
                Py_ssize_t offset, Py_ssize_t shift):
    cdef Py_ssize_t width = out.shape[0]
    cdef Py_ssize_t length = comp.shape[0]
    cdef Py_ssize_t a = offset if offset > 0 else 0
    cdef Py_ssize_t b = offset + length
    cdef Py_ssize_t n, idx
    if b > width:
        b = width
    with nogil:
        for n in range(a, b):
            idx = (n - offset + shift) % length
            if idx < 0:
                idx += length
            out[n] = out[n] + comp[idx]
