# cython: language_level=3
"""Compiled kernel core.

Bit-compatible with lsx.kernels._fallback: identical arithmetic order,
identical tie rules, identical auction bid order.  The fallback is the
reference for semantics; this file only buys speed.
"""

import numpy as np

cimport numpy as cnp
from libc.float cimport DBL_MAX
from libc.stdlib cimport free, malloc

from lsx.kernels._fallback import AssignmentError

cnp.import_array()


def fps(double[:, ::1] points, Py_ssize_t k, Py_ssize_t first):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] chosen = np.empty(k, dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mind_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] mind = mind_arr
    cdef Py_ssize_t i, j, t, nxt
    cdef double s, diff, best

    for j in range(n):
        s = 0.0
        for i in range(d):
            diff = points[j, i] - points[first, i]
            s = s + diff * diff
        mind[j] = s
    chosen[0] = first
    for t in range(1, k):
        nxt = 0
        best = mind[0]
        for j in range(1, n):
            if mind[j] > best:
                best = mind[j]
                nxt = j
        chosen[t] = nxt
        for j in range(n):
            s = 0.0
            for i in range(d):
                diff = points[j, i] - points[nxt, i]
                s = s + diff * diff
            if s < mind[j]:
                mind[j] = s
    return chosen


def ball_query(double[:, ::1] points, cnp.int64_t[::1] centers, double radius, Py_ssize_t max_group):
    cdef Py_ssize_t n = points.shape[0]
    cdef Py_ssize_t d = points.shape[1]
    cdef Py_ssize_t k = centers.shape[0]
    cdef double r2 = radius * radius
    cdef cnp.ndarray[cnp.int64_t, ndim=2] out_arr = np.empty((k, max_group), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] d2_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] d2 = d2_arr
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] used_arr = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] used = used_arr
    cdef Py_ssize_t row, c, i, j, slot, bj
    cdef double s, diff, bd

    for row in range(k):
        c = centers[row]
        for j in range(n):
            s = 0.0
            for i in range(d):
                diff = points[j, i] - points[c, i]
                s = s + diff * diff
            d2[j] = s
            used[j] = 0
        out[row, 0] = c
        for slot in range(1, max_group):
            bj = -1
            bd = DBL_MAX
            for j in range(n):
                if j == c or used[j] or d2[j] > r2:
                    continue
                if d2[j] < bd:
                    bd = d2[j]
                    bj = j
            if bj < 0:
                for i in range(slot, max_group):
                    out[row, i] = c
                break
            used[bj] = 1
            out[row, slot] = bj
    return out_arr


def nn_sqdist(double[:, ::1] a, double[:, ::1] b, Py_ssize_t block=256):
    # `block` is accepted for signature parity with the fallback; the scan
    # is already cache-friendly without chunking.
    cdef Py_ssize_t n = a.shape[0]
    cdef Py_ssize_t m = b.shape[0]
    cdef Py_ssize_t d = a.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i, j, t
    cdef double s, diff, best

    with nogil:
        for i in range(n):
            best = DBL_MAX
            for j in range(m):
                s = 0.0
                for t in range(d):
                    diff = a[i, t] - b[j, t]
                    s = s + diff * diff
                if s < best:
                    best = s
            out[i] = best
    return out_arr


def auction(double[:, ::1] cost, double eps_start, double eps_min, double theta, long long max_bids, init_prices=None):
    cdef Py_ssize_t n = cost.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] assign_arr = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] assign = assign_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] prices_arr
    if init_prices is None:
        prices_arr = np.zeros(n, dtype=np.float64)
    else:
        prices_arr = np.array(init_prices, dtype=np.float64, copy=True)
    if n == 1:
        assign[0] = 0
        return assign_arr, prices_arr

    cdef double[::1] prices = prices_arr
    cdef cnp.int64_t *owner = <cnp.int64_t *> malloc(n * sizeof(cnp.int64_t))
    cdef cnp.int64_t *stack = <cnp.int64_t *> malloc(n * sizeof(cnp.int64_t))
    if owner == NULL or stack == NULL:
        free(owner)
        free(stack)
        raise MemoryError()

    cdef double eps = eps_start if eps_start > eps_min else eps_min
    cdef long long bids = 0
    cdef Py_ssize_t i, j, bj, prev, top
    cdef double v, w1, w2
    cdef bint overflow = 0

    try:
        with nogil:
            while True:
                for j in range(n):
                    owner[j] = -1
                    assign[j] = -1
                for i in range(n):
                    stack[i] = n - 1 - i
                top = n
                while top > 0:
                    top -= 1
                    i = stack[top]
                    bj = 0
                    w1 = -cost[i, 0] - prices[0]
                    w2 = -DBL_MAX
                    for j in range(1, n):
                        v = -cost[i, j] - prices[j]
                        if v > w1:
                            w2 = w1
                            w1 = v
                            bj = j
                        elif v > w2:
                            w2 = v
                    prices[bj] += (w1 - w2) + eps
                    prev = owner[bj]
                    owner[bj] = i
                    assign[i] = bj
                    if prev >= 0:
                        assign[prev] = -1
                        stack[top] = prev
                        top += 1
                    bids += 1
                    if bids > max_bids:
                        overflow = 1
                        break
                if overflow or eps <= eps_min:
                    break
                eps = eps / theta
                if eps < eps_min:
                    eps = eps_min
    finally:
        free(owner)
        free(stack)
    if overflow:
        raise AssignmentError(f"auction exceeded {max_bids} bids (eps={eps:g})")
    return assign_arr, prices_arr
