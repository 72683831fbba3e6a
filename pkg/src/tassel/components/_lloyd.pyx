# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Lloyd kernel. Same contract and arithmetic order as _lloyd_py."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef void _assign(const double[:, ::1] X, const double[:, ::1] C,
                  long long[::1] labels, double[::1] dist) noexcept nogil:
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], k = C.shape[0]
    cdef Py_ssize_t i, j, f
    cdef double s, diff, best
    cdef long long arg
    for i in range(n):
        best = 0.0
        arg = -1
        for j in range(k):
            s = 0.0
            for f in range(p):
                diff = X[i, f] - C[j, f]
                s = s + diff * diff
            if arg < 0 or s < best:
                best = s
                arg = j
        labels[i] = arg
        dist[i] = best


cdef double _inertia(const double[::1] dist) noexcept nogil:
    cdef double total = 0.0
    cdef Py_ssize_t i
    for i in range(dist.shape[0]):
        total = total + dist[i]
    return total


cdef Py_ssize_t _update(const double[:, ::1] X, const long long[::1] labels,
                        const double[::1] dist, double[:, ::1] C,
                        long long[::1] counts, long long[::1] order) noexcept nogil:
    """Write member means into C; reseed empty clusters. Returns #empty."""
    cdef Py_ssize_t n = X.shape[0], p = X.shape[1], k = C.shape[0]
    cdef Py_ssize_t i, j, f, n_empty = 0, pos = 0
    for j in range(k):
        counts[j] = 0
        for f in range(p):
            C[j, f] = 0.0
    for i in range(n):
        j = labels[i]
        counts[j] += 1
        for f in range(p):
            C[j, f] = C[j, f] + X[i, f]
    for j in range(k):
        if counts[j] > 0:
            for f in range(p):
                C[j, f] = C[j, f] / counts[j]
        else:
            n_empty += 1
    if n_empty:
        for j in range(k):
            if counts[j] == 0:
                i = order[pos]
                pos += 1
                for f in range(p):
                    C[j, f] = X[i, f]
    return n_empty


def lloyd(X, C0, int max_iters, double tol):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] C = np.array(C0, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t n = Xv.shape[0], p = Xv.shape[1], k = C.shape[0]
    cdef double[:, ::1] C_new = np.empty((k, p), dtype=np.float64)
    cdef long long[::1] labels = np.empty(n, dtype=np.int64)
    cdef long long[::1] counts = np.empty(k, dtype=np.int64)
    cdef long long[::1] order
    cdef double[::1] dist = np.empty(n, dtype=np.float64)
    cdef double shift, s, diff
    cdef Py_ssize_t it, j, f, i
    trace = []
    with nogil:
        _assign(Xv, C, labels, dist)
    trace.append(_inertia(dist))
    for it in range(max_iters):
        order = np.argsort(-np.asarray(dist), kind="stable").astype(np.int64)
        with nogil:
            _update(Xv, labels, dist, C_new, counts, order)
            shift = 0.0
            for j in range(k):
                s = 0.0
                for f in range(p):
                    diff = C_new[j, f] - C[j, f]
                    s = s + diff * diff
                if s > shift:
                    shift = s
            C[:, :] = C_new
            _assign(Xv, C, labels, dist)
        trace.append(_inertia(dist))
        if shift < tol * tol:
            break
    counts_arr = np.bincount(np.asarray(labels), minlength=k)
    if (counts_arr > 0).all():
        order = np.zeros(1, dtype=np.int64)
        with nogil:
            _update(Xv, labels, dist, C, counts, order)
            for i in range(n):
                s = 0.0
                for f in range(p):
                    diff = Xv[i, f] - C[labels[i], f]
                    s = s + diff * diff
                dist[i] = s
        trace.append(_inertia(dist))
    return np.asarray(C).copy(), np.asarray(labels).copy(), np.array(trace)


def sq_distances(X, C):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] Cv = np.ascontiguousarray(C, dtype=np.float64)
    cdef Py_ssize_t n = Xv.shape[0], p = Xv.shape[1], k = Cv.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    cdef double[:, ::1] d = out
    cdef Py_ssize_t i, j, f
    cdef double s, diff
    with nogil:
        for i in range(n):
            for j in range(k):
                s = 0.0
                for f in range(p):
                    diff = Xv[i, f] - Cv[j, f]
                    s = s + diff * diff
                d[i, j] = s
    return out


def transfer_refine(X, C, labels, int max_passes):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    C_arr = np.array(C, dtype=np.float64, copy=True, order="C")
    lab_arr = np.array(labels, dtype=np.int64, copy=True)
    cdef double[:, ::1] Cv = C_arr
    cdef long long[::1] lab = lab_arr
    cdef Py_ssize_t n_pts = Xv.shape[0], p = Xv.shape[1], k = Cv.shape[0]
    counts = np.bincount(lab_arr, minlength=k).astype(np.float64)
    if k < 2 or (counts == 0).any():
        return C_arr, lab_arr, False
    cdef double[::1] n = counts
    cdef double[::1] d = np.empty(k, dtype=np.float64)
    cdef Py_ssize_t it, i, j, f, a, b
    cdef double s, diff, c, best, out_cost
    cdef bint moved, changed = False
    with nogil:
        for it in range(max_passes):
            moved = False
            for i in range(n_pts):
                a = lab[i]
                if n[a] <= 1:
                    continue
                for j in range(k):
                    s = 0.0
                    for f in range(p):
                        diff = Xv[i, f] - Cv[j, f]
                        s = s + diff * diff
                    d[j] = s
                b = -1
                best = 0.0
                for j in range(k):
                    if j == a:
                        continue
                    c = n[j] / (n[j] + 1) * d[j]
                    if b < 0 or c < best:
                        best = c
                        b = j
                out_cost = n[a] / (n[a] - 1) * d[a] * (1 - 1e-12)
                if best < out_cost:
                    for f in range(p):
                        Cv[a, f] = (Cv[a, f] * n[a] - Xv[i, f]) / (n[a] - 1)
                        Cv[b, f] = (Cv[b, f] * n[b] + Xv[i, f]) / (n[b] + 1)
                    n[a] -= 1
                    n[b] += 1
                    lab[i] = b
                    moved = True
            if moved:
                changed = True
            else:
                break
        if changed:
            for j in range(k):
                for f in range(p):
                    Cv[j, f] = 0.0
            for i in range(n_pts):
                j = lab[i]
                for f in range(p):
                    Cv[j, f] = Cv[j, f] + Xv[i, f]
            for j in range(k):
                for f in range(p):
                    Cv[j, f] = Cv[j, f] / n[j]
    return C_arr, lab_arr, bool(changed)
