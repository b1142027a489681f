"""Deterministic k-means++ over patch feature vectors.

The clustering operates on raw (unnormalized) feature vectors; cosine
similarity is only used for prototype matching elsewhere. Coordinate
augmentation (``augment_with_coords``) is the optional spatial term used
by the query pre-pass.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import FeatureMap

__all__ = ["Clustering", "KMeansConfig", "augment_with_coords", "kmeans"]


@dataclass(frozen=True)
class KMeansConfig:
    """Clustering parameters; ``tol`` is a relative cost-improvement cutoff."""

    k: int
    max_iters: int = 100
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.tol < 0:
            raise ValueError("tol must be >= 0")


@dataclass
class Clustering:
    """Result of one kmeans run.

    ``cost`` is the sum of squared Euclidean distances of every point to
    its assigned centroid, consistent with the stored ``assignments`` and
    ``centroids``. ``cost_history`` holds the cost after every assignment
    step (non-increasing).
    """

    assignments: np.ndarray
    centroids: np.ndarray
    cost: float
    cost_history: np.ndarray = field(repr=False, default_factory=lambda: np.empty(0))

    @property
    def k(self) -> int:
        return self.centroids.shape[0]


def _pairwise_sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(axis=1)[:, None] + (c * c).sum(axis=1)[None, :] - 2.0 * (x @ c.T)
    np.maximum(d, 0.0, out=d)
    return d


def _plusplus_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    # Documented RNG stream: PCG64 via np.random.default_rng(seed), consuming
    # exactly one float64 (rng.random()) per centroid. The first centroid is
    # uniform over points; each next one is drawn proportionally to the
    # squared distance to the nearest already-chosen centroid via inverse
    # transform on the cumulative sum.
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]), dtype=np.float64)
    first = min(int(rng.random() * n), n - 1)
    centroids[0] = x[first]
    d2 = ((x - centroids[0]) ** 2).sum(axis=1)
    for m in range(1, k):
        total = float(d2.sum())
        if total <= 0.0:
            # numerically indistinguishable remainder; unreachable after
            # clamping k to the distinct-point count
            centroids[m] = x[int(np.argmax(d2))]
            continue
        target = rng.random() * total
        idx = int(np.searchsorted(np.cumsum(d2), target, side="right"))
        idx = min(idx, n - 1)
        centroids[m] = x[idx]
        d2 = np.minimum(d2, ((x - centroids[m]) ** 2).sum(axis=1))
    return centroids


def _update_centroids(x: np.ndarray, assign: np.ndarray, k: int) -> np.ndarray:
    counts = np.bincount(assign, minlength=k)
    sums = np.zeros((k, x.shape[1]), dtype=np.float64)
    np.add.at(sums, assign, x)
    centroids = sums / np.maximum(counts, 1)[:, None]
    empty = np.flatnonzero(counts == 0)
    if empty.size:
        # re-seed each empty cluster at the point farthest from its centroid
        d = ((x - centroids[assign]) ** 2).sum(axis=1)
        for j in empty:
            p = int(np.argmax(d))
            centroids[j] = x[p]
            d[p] = 0.0
    return centroids


def kmeans(points, config: KMeansConfig) -> Clustering:
    """k-means++ seeding followed by Lloyd iterations, fully deterministic.

    Stops at an assignment fixpoint, when the relative cost improvement
    drops below ``config.tol``, or after ``config.max_iters`` iterations.
    ``config.k`` is clamped to the number of distinct points. Assignment
    ties go to the lowest cluster index; empty clusters are re-seeded to
    the point farthest from its assigned centroid.
    """
    try:
        x = np.asarray(points, dtype=np.float64)
    except ValueError as exc:
        raise ValueError("points must all share one dimension") from exc
    if x.ndim != 2:
        if x.ndim == 1 and x.size == 0:
            raise ValueError("kmeans needs at least one point")
        raise ValueError(f"points must form an (n, dim) array, got shape {x.shape}")
    if x.shape[0] == 0:
        raise ValueError("kmeans needs at least one point")

    n_distinct = np.unique(x, axis=0).shape[0]
    k = min(config.k, n_distinct)
    rng = np.random.default_rng(config.seed)
    centroids = _plusplus_init(x, k, rng)

    history: list[float] = []
    prev_assign: np.ndarray | None = None
    assign = np.zeros(x.shape[0], dtype=np.int64)
    for it in range(config.max_iters):
        assign = np.argmin(_pairwise_sq_dists(x, centroids), axis=1)
        cost = float(((x - centroids[assign]) ** 2).sum())
        history.append(cost)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        if len(history) >= 2:
            prev_cost = history[-2]
            if prev_cost <= 0.0 or (prev_cost - cost) / prev_cost < config.tol:
                break
        if it == config.max_iters - 1:
            break
        centroids = _update_centroids(x, assign, k)
        prev_assign = assign
    return Clustering(
        assignments=assign,
        centroids=centroids,
        cost=history[-1],
        cost_history=np.asarray(history),
    )


def augment_with_coords(fmap: FeatureMap, alpha_co: float) -> np.ndarray:
    """Append scaled grid coordinates to every patch feature.

    Patch (i, j) becomes ``concat(feature, alpha_co * i / n, alpha_co * j / n)``
    at row-major index ``i * n + j``; output shape is (n**2, dim + 2).
    """
    if alpha_co < 0:
        raise ValueError("alpha_co must be >= 0")
    n = fmap.n_patches
    idx = np.arange(n, dtype=np.float64)
    rows = np.repeat(idx, n) * alpha_co / n
    cols = np.tile(idx, n) * alpha_co / n
    return np.concatenate([fmap.flat, rows[:, None], cols[:, None]], axis=1)
