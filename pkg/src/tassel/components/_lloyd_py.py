"""Pure-numpy Lloyd kernel, used when the compiled extension is unavailable.

Accumulation order matches ``_lloyd.pyx`` (features summed left to right,
points summed in index order) so both kernels return the same bits.
"""

import numpy as np


def sq_distances(X, C):
    """Squared Euclidean distances, shape ``(n_points, n_centroids)``."""
    d = np.zeros((X.shape[0], C.shape[0]), dtype=np.float64)
    for f in range(X.shape[1]):
        diff = X[:, f, None] - C[None, :, f]
        d += diff * diff
    return d


def _assign(X, C):
    d = sq_distances(X, C)
    labels = np.argmin(d, axis=1)
    dist = d[np.arange(X.shape[0]), labels]
    return labels, dist


def _inertia(dist):
    total = 0.0
    for v in dist.tolist():
        total += v
    return total


def _update(X, labels, dist, k):
    sums = np.zeros((k, X.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, X)
    counts = np.bincount(labels, minlength=k)
    C = np.empty_like(sums)
    nonempty = counts > 0
    C[nonempty] = sums[nonempty] / counts[nonempty, None]
    empty = np.flatnonzero(~nonempty)
    if empty.size:
        # farthest points first; stable order breaks ties by index
        order = np.argsort(-dist, kind="stable")
        for j, i in zip(empty, order):
            C[j] = X[i]
    return C


def lloyd(X, C0, max_iters, tol):
    """Run Lloyd iterations from ``C0``.

    Returns ``(centroids, labels, inertia_trace)``; the trace holds the
    inertia after every assignment step, the last entry is the final value.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.array(C0, dtype=np.float64, copy=True)
    k = C.shape[0]
    labels, dist = _assign(X, C)
    trace = [_inertia(dist)]
    for _ in range(max_iters):
        C_new = _update(X, labels, dist, k)
        diff = C_new - C
        shift = 0.0
        for j in range(k):
            s = 0.0
            for v in diff[j].tolist():
                s += v * v
            shift = max(shift, s)
        C = C_new
        labels, dist = _assign(X, C)
        trace.append(_inertia(dist))
        if shift < tol * tol:
            break
    counts = np.bincount(labels, minlength=k)
    if (counts > 0).all():
        C = _update(X, labels, dist, k)
        dist = sq_distances(X, C)[np.arange(X.shape[0]), labels]
        trace.append(_inertia(dist))
    return C, labels.astype(np.int64), np.array(trace)


def _member_means(X, labels, k):
    sums = np.zeros((k, X.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, X)
    return sums / np.bincount(labels, minlength=k)[:, None]


def transfer_refine(X, C, labels, max_passes):
    """Single-point transfers after Lloyd has converged (Hartigan's rule).

    A point moves from cluster ``a`` to ``b`` when
    ``n_b / (n_b + 1) * |x - c_b|^2 < n_a / (n_a - 1) * |x - c_a|^2``, which
    strictly lowers the inertia. On tiny objects some optima cannot be
    reached by Lloyd from any seeding.

    Returns ``(centroids, labels, changed)``; centroids are recomputed as
    exact member means when anything moved.
    """
    X = np.ascontiguousarray(X, dtype=np.float64)
    C = np.array(C, dtype=np.float64, copy=True)
    labels = np.array(labels, dtype=np.int64, copy=True)
    k = C.shape[0]
    n = np.bincount(labels, minlength=k).astype(np.float64)
    if k < 2 or (n == 0).any():
        return C, labels, False
    changed = False
    for _ in range(max_passes):
        moved = False
        for i in range(X.shape[0]):
            a = int(labels[i])
            if n[a] <= 1:
                continue
            d = sq_distances(X[i : i + 1], C)[0]
            cost = n / (n + 1) * d
            cost[a] = np.inf
            b = int(np.argmin(cost))
            # relative margin keeps round-off from cycling a point back and forth
            if cost[b] < n[a] / (n[a] - 1) * d[a] * (1 - 1e-12):
                C[a] = (C[a] * n[a] - X[i]) / (n[a] - 1)
                C[b] = (C[b] * n[b] + X[i]) / (n[b] + 1)
                n[a] -= 1
                n[b] += 1
                labels[i] = b
                moved = True
        changed |= moved
        if not moved:
            break
    if changed:
        C = _member_means(X, labels, k)
    return C, labels, changed
