"""Radiometric components of objects: k-means centroids and pixel partitions."""

from .kernels import BACKEND
from .kmeans import (
    ComponentSet,
    cache_path,
    extract_all,
    extract_components,
    inertia,
    kmeans,
    kmeans_plusplus,
    load_components,
    save_components,
    stack_centroids,
)

__all__ = [
    "BACKEND", "ComponentSet", "cache_path", "extract_all", "extract_components",
    "inertia", "kmeans", "kmeans_plusplus", "load_components", "save_components",
    "stack_centroids",
]
