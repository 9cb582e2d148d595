# cython: language_level=3
"""Compiled log-space forward/backward recursions.

Semantics match ``_ref.py``: -inf entries (impossible states or
structural transition zeros) propagate without producing NaN.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, log

cnp.import_array()


cdef inline double _lse_row(double* vals, Py_ssize_t n) nogil:
    cdef Py_ssize_t i
    cdef double mx = -INFINITY
    cdef double total = 0.0
    for i in range(n):
        if vals[i] > mx:
            mx = vals[i]
    if mx == -INFINITY:
        return -INFINITY
    for i in range(n):
        total += exp(vals[i] - mx)
    return mx + log(total)


def forward_log(double[::1] log_start, double[:, ::1] log_trans,
                double[:, ::1] framelog):
    cdef Py_ssize_t n_frames = framelog.shape[0]
    cdef Py_ssize_t n_states = framelog.shape[1]
    out = np.empty((n_frames, n_states), dtype=np.float64)
    cdef double[:, ::1] log_alpha = out
    work_arr = np.empty(n_states, dtype=np.float64)
    cdef double[::1] work = work_arr
    cdef Py_ssize_t t, i, j
    cdef double loglik
    with nogil:
        for j in range(n_states):
            log_alpha[0, j] = log_start[j] + framelog[0, j]
        for t in range(1, n_frames):
            for j in range(n_states):
                for i in range(n_states):
                    work[i] = log_alpha[t - 1, i] + log_trans[i, j]
                log_alpha[t, j] = _lse_row(&work[0], n_states) + framelog[t, j]
        for j in range(n_states):
            work[j] = log_alpha[n_frames - 1, j]
        loglik = _lse_row(&work[0], n_states)
    return out, loglik


def backward_log(double[:, ::1] log_trans, double[:, ::1] framelog):
    cdef Py_ssize_t n_frames = framelog.shape[0]
    cdef Py_ssize_t n_states = framelog.shape[1]
    out = np.empty((n_frames, n_states), dtype=np.float64)
    cdef double[:, ::1] log_beta = out
    work_arr = np.empty(n_states, dtype=np.float64)
    cdef double[::1] work = work_arr
    cdef Py_ssize_t t, i, j
    with nogil:
        for j in range(n_states):
            log_beta[n_frames - 1, j] = 0.0
        for t in range(n_frames - 2, -1, -1):
            for i in range(n_states):
                for j in range(n_states):
                    work[j] = log_trans[i, j] + framelog[t + 1, j] + log_beta[t + 1, j]
                log_beta[t, i] = _lse_row(&work[0], n_states)
    return out
