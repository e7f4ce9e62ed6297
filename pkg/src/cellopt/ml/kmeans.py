"""Lloyd k-means with k-means++ seeding and the two-class cluster labeling."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class DegenerateClusterError(ValueError):
    """More clusters were requested than there are distinct points."""


@dataclass(frozen=True)
class ClusterModel:
    """Fitted centroids.

    Attributes
    ----------
    centroids : numpy.ndarray
        ``(k, d)`` cluster centres.
    seed : int
    inertia : float
        Sum of squared distances of the training points to their centroid.
    n_iter : int
    history : list of float
        Inertia after every Lloyd assignment step.
    """

    centroids: np.ndarray
    seed: int
    inertia: float
    n_iter: int = 0
    history: list = field(default_factory=list, repr=False)

    @property
    def k(self) -> int:
        return len(self.centroids)

    def predict(self, points) -> np.ndarray:
        return assign(np.asarray(points, dtype=float), self.centroids)[0]

    def to_dict(self) -> dict:
        return {"centroids": self.centroids.tolist(), "seed": self.seed,
                "inertia": self.inertia, "n_iter": self.n_iter}

    @classmethod
    def from_dict(cls, d) -> "ClusterModel":
        return cls(np.array(d["centroids"], dtype=float), d["seed"], d["inertia"], d["n_iter"])


def assign(points, centroids) -> tuple:
    """Nearest-centroid index and squared distance for every point."""
    d2 = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    idx = np.argmin(d2, axis=1)
    return idx, d2[np.arange(len(points)), idx]


def _plus_plus(points, k, rng):
    centers = [points[rng.integers(len(points))]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        probs = d2 / total if total > 0 else None
        c = points[rng.choice(len(points), p=probs)]
        centers.append(c)
        d2 = np.minimum(d2, ((points - c) ** 2).sum(axis=1))
    return np.array(centers)


def kmeans_fit(points, k: int, seed: int = 42, max_iter: int = 300) -> ClusterModel:
    """Cluster ``points`` into ``k`` groups.

    Parameters
    ----------
    points : array_like
        ``(n, d)`` data, typically min-max scaled targets.
    k : int
    seed : int
        Seeds the k-means++ draw.
    max_iter : int
        Cap on Lloyd iterations; iteration otherwise stops once no assignment
        changes.

    Raises
    ------
    DegenerateClusterError
        If ``k`` exceeds the number of distinct points.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(np.unique(pts, axis=0)):
        raise DegenerateClusterError(f"k={k} exceeds the number of distinct points")
    rng = np.random.default_rng(seed)
    # k-means++ may draw a duplicate location on repeated points; redraw
    for _ in range(100):
        centroids = _plus_plus(pts, k, rng)
        if len(np.unique(centroids, axis=0)) == k:
            break
    labels, d2 = assign(pts, centroids)
    history = [float(d2.sum())]
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = labels == j
            if members.any():
                centroids[j] = pts[members].mean(axis=0)
            else:
                # an emptied cluster takes the point farthest from its centre
                far = int(np.argmax(d2))
                centroids[j] = pts[far]
                d2[far] = 0.0
        new, d2 = assign(pts, centroids)
        history.append(float(d2.sum()))
        if np.array_equal(new, labels):
            break
        labels = new
    return ClusterModel(centroids, seed, history[-1], it, history)


def superior_clusters(model: ClusterModel) -> np.ndarray:
    """Boolean per cluster: first coordinate above and second below the centroid medians.

    The first coordinate is the scaled efficiency and the second the scaled
    degradation, so a qualifying cluster is both efficient and stable
    relative to the other clusters.
    """
    c = model.centroids
    return (c[:, 0] > np.median(c[:, 0])) & (c[:, 1] < np.median(c[:, 1]))


def label_clusters(points, model: ClusterModel) -> np.ndarray:
    """1 for rows in a superior cluster, 0 otherwise."""
    return superior_clusters(model)[model.predict(points)].astype(int)


def minmax_scale(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    lo, span = a.min(axis=0), np.ptp(a, axis=0)
    return (a - lo) / np.where(span > 0, span, 1.0)
