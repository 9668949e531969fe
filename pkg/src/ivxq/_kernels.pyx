# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops: diagonal AR(1) recursion, finite linear filter, check loss."""

import numpy as np


def ar_recursion(const double[:, :] v, const double[:] rho):
    """x[t] = rho * x[t-1] + v[t] column-wise, with x[-1] = 0."""
    cdef Py_ssize_t n = v.shape[0], p = v.shape[1], t, i
    out = np.empty((n, p), dtype=np.float64)
    cdef double[:, :] x = out
    if n == 0:
        return out
    for i in range(p):
        x[0, i] = v[0, i]
    for t in range(1, n):
        for i in range(p):
            x[t, i] = rho[i] * x[t - 1, i] + v[t, i]
    return out


def linear_filter(const double[:, :] e, const double[:, :, :] weights):
    """out[t] = sum_j weights[j] @ e[t - j], pre-sample e treated as zero."""
    cdef Py_ssize_t n = e.shape[0], m = e.shape[1]
    cdef Py_ssize_t nq = weights.shape[0], p = weights.shape[1]
    cdef Py_ssize_t t, j, a, b
    cdef double acc
    out = np.zeros((n, p), dtype=np.float64)
    cdef double[:, :] y = out
    for t in range(n):
        for j in range(nq):
            if j > t:
                break
            for a in range(p):
                acc = 0.0
                for b in range(m):
                    acc += weights[j, a, b] * e[t - j, b]
                y[t, a] += acc
    return out


def check_loss_sum(const double[:] u, double tau):
    """Sum of u * (tau - 1{u < 0})."""
    cdef Py_ssize_t n = u.shape[0], t
    cdef double total = 0.0, negative = 0.0, ut
    # branch-free tau * sum(u) - sum(min(u, 0))
    for t in range(n):
        ut = u[t]
        total += ut
        negative += ut if ut < 0.0 else 0.0
    return tau * total - negative
