"""K-means on standardized features plus per-curve polynomial coefficients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dimred import PiecewisePolyModel, pca_fit, pca_project


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, M) -> "Standardizer":
        M = np.asarray(M, dtype=float)
        mean = M.mean(axis=0)
        std = M.std(axis=0)
        # constant columns pass through unscaled and uncentered
        const = std == 0
        return cls(np.where(const, 0.0, mean), np.where(const, 1.0, std))

    def transform(self, M) -> np.ndarray:
        M = np.atleast_2d(np.asarray(M, dtype=float))
        if M.shape[1] != self.mean.shape[0]:
            raise ValueError(f"expected {self.mean.shape[0]} columns, got {M.shape[1]}")
        return (M - self.mean) / self.scale


def raw_cluster_matrix(features, outputs, poly: PiecewisePolyModel) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    outputs = np.asarray(outputs, dtype=float)
    if features.shape[0] != outputs.shape[0]:
        raise ValueError("features and outputs differ in row count")
    return np.hstack([features, poly.fit(outputs)])


def build_cluster_matrix(dataset, poly: PiecewisePolyModel,
                         standardizer: Standardizer | None = None):
    """Features with curve coefficients appended, each column standardized.

    Returns ``(matrix, standardizer)``; pass a fitted ``standardizer`` to
    map new rows into an existing clustering space.
    """
    raw = raw_cluster_matrix(dataset.features, dataset.outputs, poly)
    std = standardizer or Standardizer.fit(raw)
    return std.transform(raw), std


@dataclass
class KMeansModel:
    centroids: np.ndarray
    labels: np.ndarray
    distortion: float
    history: list = field(default_factory=list)
    n_iter: int = 0
    standardizer: Standardizer | None = None

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _exact_sq_dist(M, C):
    return ((M[:, None, :] - C[None, :, :]) ** 2).sum(-1)


def _plusplus(M, k, rng):
    n = M.shape[0]
    centers = [M[rng.integers(n)]]
    d2 = _exact_sq_dist(M, centers[0][None])[:, 0]
    for _ in range(1, k):
        total = d2.sum()
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(M[idx])
        d2 = np.minimum(d2, _exact_sq_dist(M, M[idx][None])[:, 0])
    return np.array(centers)


def _canonical(centroids, labels):
    # lexicographic order of centroids so labels do not depend on the seed
    order = np.lexsort(centroids.T[::-1])
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return centroids[order], rank[labels]


def kmeans_fit(matrix, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-8,
               standardizer: Standardizer | None = None) -> KMeansModel:
    """Lloyd iterations from a k-means++ start.

    Stops when no centroid moves more than ``tol`` or after ``max_iter``.
    An empty cluster is re-seeded at the point farthest from its centroid.
    Labels are renumbered by lexicographic centroid order.
    """
    M = np.asarray(matrix, dtype=float)
    n = M.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must lie in [1, n={n}]")
    rng = np.random.default_rng(seed)
    C = _plusplus(M, k, rng)
    history = []
    labels = np.zeros(n, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        d = _exact_sq_dist(M, C)
        labels = np.argmin(d, axis=1)
        history.append(float(d[np.arange(n), labels].sum()))
        newC = C.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                newC[j] = M[members].mean(axis=0)
            else:
                far = int(np.argmax(d[np.arange(n), labels]))
                newC[j] = M[far]
                labels[far] = j
        shift = np.sqrt(((newC - C) ** 2).sum(1)).max()
        C = newC
        if shift < tol:
            break
    labels = np.argmin(_exact_sq_dist(M, C), axis=1)
    distortion = float(((M - C[labels]) ** 2).sum())
    history.append(distortion)
    C, labels = _canonical(C, labels)
    return KMeansModel(C, labels, distortion, history, it, standardizer)


def elbow_select(matrix, k_range, seed: int = 0, restarts: int = 5, **kw):
    """Pick k at the largest second difference of the distortion curve.

    Each k keeps the best of ``restarts`` seeded runs. Returns
    ``(k, distortions, models)`` with one entry per ``k_range`` value.
    """
    ks = list(k_range)
    if len(ks) < 3:
        raise ValueError("elbow selection needs at least 3 values of k")
    if ks != sorted(set(ks)) or any(ks[i + 1] - ks[i] != 1 for i in range(len(ks) - 1)):
        raise ValueError("k_range must be consecutive increasing integers")
    n = np.asarray(matrix).shape[0]
    if ks[0] < 1 or ks[-1] > n:
        raise ValueError(f"k_range must lie within [1, {n}]")
    models = []
    for k in ks:
        runs = [kmeans_fit(matrix, k, seed=seed * 1000 + 10 * k + r, **kw) for r in range(restarts)]
        models.append(min(runs, key=lambda m: m.distortion))
    dist = np.array([m.distortion for m in models])
    second = dist[:-2] - 2.0 * dist[1:-1] + dist[2:]
    best = int(np.argmax(second)) + 1
    return ks[best], dist, models


def assign_cluster(model: KMeansModel, rows) -> np.ndarray:
    """Nearest centroid; equidistant rows go to the lower label."""
    rows = np.atleast_2d(np.asarray(rows, dtype=float))
    if rows.shape[1] != model.centroids.shape[1]:
        raise ValueError(f"expected {model.centroids.shape[1]} columns, got {rows.shape[1]}")
    return np.argmin(_exact_sq_dist(rows, model.centroids), axis=1)


def score_coordinates(matrix, n_components: int = 2) -> np.ndarray:
    """Leading principal-component scores of the clustering matrix, for plotting."""
    return pca_project(pca_fit(matrix, n_components=n_components), matrix)
