"""Seeded k-means++ with Lloyd refinement.

A deliberately small implementation so that every draw comes from an
explicit Generator: clustering results are then reproducible functions of
(data, k, stream), independent of library versions and thread counts.
"""
from __future__ import annotations

import numpy as np

_SHIFT_TOL = 1e-8
_MAX_ITER = 200


def kmeans_pp_seeds(x: np.ndarray, k: int, gen: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: first center uniform, then proportional to
    squared distance from the nearest chosen center."""
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    idx = int(gen.integers(n))
    centers[0] = x[idx]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # All remaining points coincide with a chosen center.
            centers[j:] = centers[0]
            break
        probs = d2 / total
        idx = int(np.searchsorted(np.cumsum(probs), gen.random(), side="right"))
        idx = min(idx, n - 1)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def lloyd(x: np.ndarray, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations to convergence (max center shift < 1e-8).

    Empty clusters keep their previous center. Returns (centers, labels).
    """
    centers = centers.copy()
    labels = np.zeros(x.shape[0], dtype=np.int64)
    for _ in range(_MAX_ITER):
        d2 = np.sum((x[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        labels = np.argmin(d2, axis=1)
        new_centers = centers.copy()
        for j in range(centers.shape[0]):
            mask = labels == j
            if mask.any():
                new_centers[j] = x[mask].mean(axis=0)
        shift = np.max(np.sqrt(np.sum((new_centers - centers) ** 2, axis=1)))
        centers = new_centers
        if shift < _SHIFT_TOL:
            break
    return centers, labels


def kmeans(x: np.ndarray, k: int, gen: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """k-means++ seeded Lloyd clustering; returns (centers, labels)."""
    x = np.asarray(x, dtype=np.float64)
    if k >= x.shape[0]:
        return x.copy(), np.arange(x.shape[0], dtype=np.int64)
    return lloyd(x, kmeans_pp_seeds(x, k, gen))


def bisect(x: np.ndarray, gen: np.random.Generator) -> np.ndarray:
    """2-means split; returns a boolean mask of the first cluster.

    The mask may be all-True/all-False when the points are (near)
    duplicates; the caller decides how to break such ties.
    """
    _, labels = kmeans(x, 2, gen)
    return labels == labels[0]
