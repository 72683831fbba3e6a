"""Per-object component extraction with restarted k-means++ / Lloyd."""

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .. import rng as rngmod
from ..errors import ConfigError, ObjectError, SchemaError, TasselError
from . import kernels

DEFAULT_RESTARTS = 10
DEFAULT_MAX_ITERS = 100
DEFAULT_TOL = 1e-6


@dataclass(frozen=True)
class ComponentSet:
    """Centroid series of one object plus its pixel partition.

    ``centroids`` always holds ``L`` entries. When the object has fewer than
    ``L`` distinct pixels, entry ``j`` repeats real component
    ``j % effective_k``.
    """

    object_id: str
    centroids: np.ndarray  # (L, T, B)
    assignment: np.ndarray  # (P,), values < effective_k
    effective_k: int

    @property
    def L(self):
        return self.centroids.shape[0]

    @property
    def source(self):
        """Real component index behind each of the ``L`` centroid slots."""
        return np.arange(self.L) % self.effective_k

    @property
    def is_padding(self):
        return np.arange(self.L) >= self.effective_k

    def merge_alpha(self, alpha):
        """Fold per-slot weights onto real components (length ``effective_k``)."""
        alpha = np.asarray(alpha, dtype=np.float64)
        if alpha.shape != (self.L,):
            raise SchemaError(f"expected {self.L} attention weights, got {alpha.shape}")
        return np.bincount(self.source, weights=alpha, minlength=self.effective_k)


def inertia(X, centroids, labels):
    d = X - centroids[labels]
    return float((d * d).sum())


def kmeans_plusplus(X, k, gen):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]), dtype=np.float64)
    centers[0] = X[gen.integers(n)]
    closest = kernels.sq_distances(X, centers[:1])[:, 0]
    for j in range(1, k):
        total = closest.sum()
        if total <= 0:
            idx = gen.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), gen.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = X[idx]
        closest = np.minimum(closest, kernels.sq_distances(X, centers[j : j + 1])[:, 0])
    return centers


def kmeans(X, k, gen, restarts=DEFAULT_RESTARTS, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL, lloyd=None,
           refine=None):
    """Best of ``restarts`` seeded Lloyd runs, each finished by point transfers.

    Returns ``(centroids, labels, inertia, traces)`` where ``traces`` lists the
    per-iteration inertia of every restart; its last entry is the inertia
    after refinement.
    """
    lloyd = lloyd or kernels.lloyd
    refine = refine or kernels.transfer_refine
    X = np.ascontiguousarray(X, dtype=np.float64)
    best = None
    traces = []
    for _ in range(max(1, restarts)):
        C0 = kmeans_plusplus(X, k, gen)
        C, labels, trace = lloyd(X, C0, max_iters, tol)
        C, labels, changed = refine(X, C, labels, max_iters)
        if changed:
            trace = list(trace) + [inertia(X, C, labels)]
        if __debug__:
            steps = np.diff(trace)
            assert (steps <= 1e-9 * max(1.0, trace[0])).all(), "Lloyd inertia increased"
        traces.append(trace)
        if best is None or trace[-1] < best[2]:
            best = (C, labels, trace[-1])
    return best[0], best[1], best[2], traces


def extract_components(obj, L, seed=0, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL, restarts=DEFAULT_RESTARTS):
    """Cluster the pixels of ``obj`` into ``L`` components.

    The random stream is derived from ``(seed, obj.id)``, so the result does
    not depend on which other objects are processed or in what order.
    """
    if int(L) < 1:
        raise ConfigError(f"number of components must be >= 1, got {L}")
    L = int(L)
    P, T, B = obj.pixels.shape
    X = obj.pixels.reshape(P, T * B)
    distinct, inverse = np.unique(X, axis=0, return_inverse=True)
    if distinct.shape[0] <= L:
        centers, labels = distinct, inverse.reshape(-1)
    else:
        gen = rngmod.stream(seed, "kmeans", obj.id)
        centers, labels, _, _ = kmeans(X, L, gen, restarts=restarts, max_iters=max_iters, tol=tol)
    k = centers.shape[0]
    slots = np.arange(L) % k
    return ComponentSet(obj.id, centers[slots].reshape(L, T, B), labels.astype(np.int64), k)


def default_workers():
    try:
        return max(1, int(os.environ.get("TASSEL_THREADS", "1")))
    except ValueError:
        return 1


def extract_all(ds, L, seed=0, max_iters=DEFAULT_MAX_ITERS, tol=DEFAULT_TOL, restarts=DEFAULT_RESTARTS, workers=None):
    """Extract components for every object, in input order."""
    workers = default_workers() if workers is None else workers

    def one(obj):
        try:
            return extract_components(obj, L, seed, max_iters, tol, restarts)
        except TasselError as exc:
            raise ObjectError(obj.id, exc) from exc
        except (ValueError, ArithmeticError) as exc:
            raise ObjectError(obj.id, exc) from exc

    if workers <= 1 or len(ds) < 2:
        return [one(o) for o in ds.objects]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(one, ds.objects))


def stack_centroids(comps, dtype=np.float32):
    """``(N, L, T, B)`` array of centroid series."""
    return np.stack([c.centroids for c in comps]).astype(dtype)


# cache file --------------------------------------------------------------

def cache_path(dataset_path, L):
    base = str(dataset_path)
    for suffix in (".ndjson.gz", ".ndjson", ".gz"):
        if base.endswith(suffix):
            base = base[: -len(suffix)]
            break
    return f"{base}.components.L{L}.ndjson"


def save_components(path, comps, meta):
    """Write a header line (``meta``) followed by one ComponentSet per line."""
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps({"type": "components_header", **meta}, separators=(",", ":")) + "\n")
        for c in comps:
            rec = {
                "type": "components",
                "id": c.object_id,
                "effective_k": c.effective_k,
                "centroids": c.centroids[: c.effective_k].tolist(),
                "assignment": c.assignment.tolist(),
            }
            fh.write(json.dumps(rec, separators=(",", ":")) + "\n")


def load_components(path):
    meta = None
    comps = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            rec = json.loads(line)
            if rec.get("type") == "components_header":
                meta = {k: v for k, v in rec.items() if k != "type"}
                continue
            if meta is None:
                raise SchemaError(f"{path}: line {lineno}: component record before header")
            k = int(rec["effective_k"])
            real = np.array(rec["centroids"], dtype=np.float64)
            L = int(meta["L"])
            comps.append(ComponentSet(rec["id"], real[np.arange(L) % k], np.array(rec["assignment"], dtype=np.int64), k))
    if meta is None:
        raise SchemaError(f"{path}: missing components header")
    return meta, comps
