# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled twins of the kernels in ``_purepy``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"

cdef extern from *:
    int __builtin_popcountll(unsigned long long) nogil


def prior_params(const double[:, ::1] success, const double[:, ::1] failure,
                 Py_ssize_t user_row,
                 const cnp.int64_t[::1] nbr_users, const double[::1] nbr_weights,
                 const cnp.int64_t[::1] candidates,
                 const cnp.int64_t[:, ::1] ad_nbr_idx,
                 const double[:, ::1] ad_nbr_weights):
    cdef Py_ssize_t c = candidates.shape[0]
    cdef Py_ssize_t m = nbr_users.shape[0]
    cdef Py_ssize_t kk = ad_nbr_idx.shape[1] if ad_nbr_idx.shape[0] else 0
    out_a = np.zeros(c)
    out_b = np.zeros(c)
    cdef double[::1] alpha0 = out_a
    cdef double[::1] beta0 = out_b
    cdef Py_ssize_t q, r, col, row
    cdef double w, acc_s, acc_f
    with nogil:
        for q in range(c):
            acc_s = 0.0
            acc_f = 0.0
            if user_row >= 0:
                for r in range(kk):
                    col = ad_nbr_idx[q, r]
                    if col < 0:
                        continue
                    w = ad_nbr_weights[q, r]
                    acc_s = acc_s + w * success[user_row, col]
                    acc_f = acc_f + w * failure[user_row, col]
            col = candidates[q]
            for r in range(m):
                row = nbr_users[r]
                w = nbr_weights[r]
                acc_s = acc_s + w * success[row, col]
                acc_f = acc_f + w * failure[row, col]
            alpha0[q] = acc_s
            beta0[q] = acc_f
    return out_a, out_b


def posterior_params(const double[::1] alpha0, const double[::1] beta0,
                     const double[::1] personal_s, const double[::1] personal_f,
                     const double[::1] global_s, const double[::1] global_f,
                     double lam, double g):
    cdef Py_ssize_t c = alpha0.shape[0]
    out_a = np.empty(c)
    out_b = np.empty(c)
    cdef double[::1] alpha = out_a
    cdef double[::1] beta = out_b
    cdef Py_ssize_t q
    with nogil:
        for q in range(c):
            alpha[q] = (lam / (personal_s[q] + 1.0) * alpha0[q]
                        + g * global_s[q] + personal_s[q] + 1.0)
            beta[q] = (lam / (personal_f[q] + 1.0) * beta0[q]
                       + g * global_f[q] + personal_f[q] + 1.0)
    return out_a, out_b


def signatures(planes, vectors):
    # projection through BLAS, same call as the numpy twin so signs agree
    n_tables, n_bits, dim = planes.shape
    proj = np.ascontiguousarray(np.asarray(vectors, dtype=np.float64)
                                @ np.asarray(planes).reshape(n_tables * n_bits, dim).T)
    return _pack_bits(proj, n_tables, n_bits)


cdef _pack_bits(const double[:, ::1] proj, Py_ssize_t n_tables, Py_ssize_t n_bits):
    cdef Py_ssize_t n = proj.shape[0]
    out = np.zeros((n, n_tables), dtype=np.uint64)
    cdef cnp.uint64_t[:, ::1] codes = out
    cdef Py_ssize_t i, t, b
    cdef cnp.uint64_t code
    with nogil:
        for i in range(n):
            for t in range(n_tables):
                code = 0
                for b in range(n_bits):
                    if proj[i, t * n_bits + b] > 0.0:
                        code = code | ((<cnp.uint64_t>1) << b)
                codes[i, t] = code
    return out


def hamming(const cnp.uint64_t[:, ::1] codes, const cnp.uint64_t[::1] query):
    cdef Py_ssize_t n = codes.shape[0]
    cdef Py_ssize_t n_tables = codes.shape[1]
    out = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] dist = out
    cdef Py_ssize_t i, t
    cdef cnp.int64_t acc
    with nogil:
        for i in range(n):
            acc = 0
            for t in range(n_tables):
                acc = acc + __builtin_popcountll(codes[i, t] ^ query[t])
            dist[i] = acc
    return out
