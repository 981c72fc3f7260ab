# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops for temperature fitting and reliability binning.

Semantics match ``shiftcal._kernels_py`` exactly; only summation order
may differ, so results agree to rounding error.
"""

from libc.math cimport exp

import numpy as np

cdef enum:
    SOFTMAX = 0
    SIGMOID = 1


cdef inline double _sigmoid(double u) nogil:
    cdef double e
    if u >= 0:
        return 1.0 / (1.0 + exp(-u))
    e = exp(u)
    return e / (1.0 + e)


cdef double _example(const double[:, ::1] logits, const double[:, ::1] target,
                     double factor, long c, Py_ssize_t i, double T, int kind,
                     double* p, double* dtheta) nogil:
    """Loss of row ``i`` at temperature ``T``; adds dL/dtheta into ``dtheta``."""
    cdef Py_ssize_t K = logits.shape[1]
    cdef Py_ssize_t k
    cdef double m, s, r, loss, dot, gk, q, z
    if kind == SIGMOID:
        z = logits[i, 0]
        q = _sigmoid(T * z)
        r = q - target[i, 0]
        dtheta[0] += T * z * 2.0 * factor * r * q * (1.0 - q)
        return factor * r * r
    m = logits[i, 0]
    for k in range(1, K):
        if logits[i, k] > m:
            m = logits[i, k]
    s = 0.0
    for k in range(K):
        p[k] = exp(T * (logits[i, k] - m))
        s += p[k]
    for k in range(K):
        p[k] /= s
    loss = 0.0
    dot = 0.0
    for k in range(K):
        if c < 0 or k == c:
            r = p[k] - target[i, k]
            loss += r * r
            dot += 2.0 * factor * r * p[k]
    # dL/du_k = p_k (g_k - sum_j g_j p_j), g_k = 2 f r_k on active coordinates
    gk = 0.0
    for k in range(K):
        if c < 0 or k == c:
            gk += (2.0 * factor * (p[k] - target[i, k]) - dot) * p[k] * logits[i, k]
        else:
            gk += (-dot) * p[k] * logits[i, k]
    dtheta[0] += T * gk
    return factor * loss


def temperature_epoch(const double[:, ::1] logits, const double[:, ::1] target,
                      const double[::1] factor, const long[::1] coord,
                      const long[::1] order, double theta, double lr,
                      Py_ssize_t batch_size, int kind):
    """One SGD epoch on ``theta = log T`` visiting rows in ``order``."""
    cdef Py_ssize_t n = order.shape[0]
    cdef Py_ssize_t K = logits.shape[1]
    cdef Py_ssize_t start, stop, j, i
    cdef double grad, T
    cdef double[::1] buf = np.empty(K, dtype=np.float64)
    with nogil:
        start = 0
        while start < n:
            stop = start + batch_size
            if stop > n:
                stop = n
            T = exp(theta)
            grad = 0.0
            for j in range(start, stop):
                i = order[j]
                _example(logits, target, factor[i], coord[i], i, T, kind,
                         &buf[0], &grad)
            theta -= lr * grad / (stop - start)
            start = stop
    return theta


def temperature_loss(const double[:, ::1] logits, const double[:, ::1] target,
                     const double[::1] factor, const long[::1] coord,
                     double theta, int kind):
    """Mean loss and its derivative in ``theta`` over all rows."""
    cdef Py_ssize_t n = logits.shape[0]
    cdef Py_ssize_t K = logits.shape[1]
    cdef Py_ssize_t i
    cdef double total = 0.0, grad = 0.0, T = exp(theta)
    cdef double[::1] buf = np.empty(K, dtype=np.float64)
    with nogil:
        for i in range(n):
            total += _example(logits, target, factor[i], coord[i], i, T, kind,
                              &buf[0], &grad)
    return total / n, grad / n


def bin_sums(const double[::1] conf, const double[::1] correct,
             const double[::1] edges):
    """Per-bin count, confidence sum and correctness sum.

    Bin ``b`` holds ``edges[b] <= conf < edges[b + 1]``; the last bin is
    closed on the right.
    """
    cdef Py_ssize_t n = conf.shape[0]
    cdef Py_ssize_t B = edges.shape[0] - 1
    cdef Py_ssize_t i, lo, hi, mid
    counts = np.zeros(B, dtype=np.int64)
    sc = np.zeros(B, dtype=np.float64)
    sa = np.zeros(B, dtype=np.float64)
    cdef long long[::1] cnt = counts
    cdef double[::1] sconf = sc
    cdef double[::1] sacc = sa
    cdef double v
    with nogil:
        for i in range(n):
            v = conf[i]
            if v >= edges[B - 1]:
                lo = B - 1
            else:
                # largest lo with edges[lo] <= v
                lo = 0
                hi = B - 1
                while hi - lo > 1:
                    mid = (lo + hi) // 2
                    if edges[mid] <= v:
                        lo = mid
                    else:
                        hi = mid
            cnt[lo] += 1
            sconf[lo] += v
            sacc[lo] += correct[i]
    return counts, sc, sa
