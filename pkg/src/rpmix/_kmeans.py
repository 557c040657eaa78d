"""Minimal k-means (k-means++ seeding, Lloyd iterations) shared by the
projection-fit initializer and the EM baseline."""

from __future__ import annotations

import numpy as np


def kmeans_plus_plus(data: np.ndarray, m: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: return m initial centers, shape (m, d)."""
    n = data.shape[0]
    centers = np.empty((m, data.shape[1]))
    centers[0] = data[rng.integers(n)]
    dist2 = np.sum((data - centers[0]) ** 2, axis=1)
    for j in range(1, m):
        total = float(dist2.sum())
        if total <= 0.0:
            # all points coincide with chosen centers; fall back to uniform picks
            centers[j] = data[rng.integers(n)]
            continue
        idx = rng.choice(n, p=dist2 / total)
        centers[j] = data[idx]
        dist2 = np.minimum(dist2, np.sum((data - centers[j]) ** 2, axis=1))
    return centers


def kmeans(
    data: np.ndarray,
    m: int,
    rng: np.random.Generator,
    max_iter: int = 50,
) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm; returns (labels, centers).

    Empty clusters are reseeded at the point farthest from its assigned center,
    so every cluster is non-empty on return.
    """
    data = np.atleast_2d(np.asarray(data, dtype=float))
    n = data.shape[0]
    if m > n:
        raise ValueError(f"cannot split {n} points into {m} clusters")
    centers = kmeans_plus_plus(data, m, rng)
    labels: np.ndarray | None = None
    for _ in range(max_iter):
        d2 = np.sum((data[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_labels = np.argmin(d2, axis=1)
        for j in range(m):
            if not np.any(new_labels == j):
                worst = int(np.argmax(d2[np.arange(n), new_labels]))
                centers[j] = data[worst]
                new_labels[worst] = j
        if labels is not None and np.array_equal(new_labels, labels):
            break
        labels = new_labels
        for j in range(m):
            centers[j] = data[labels == j].mean(axis=0)
    assert labels is not None
    return labels, centers
