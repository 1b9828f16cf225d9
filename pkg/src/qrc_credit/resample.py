"""Class rebalancing for training partitions: SMOTE, K-means SMOTE, Cluster Centroids."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .errors import CapacityError, ConfigurationError, DomainError

METHODS = ("none", "smote", "ksmote", "cc")


@dataclass(frozen=True)
class ResamplePlan:
    method: str = "none"
    k_neighbors: int = 5
    kmeans_k: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigurationError(f"unknown resampler {self.method!r}; expected one of {METHODS}")
        if self.k_neighbors < 1 or self.kmeans_k < 1:
            raise ConfigurationError("k_neighbors and kmeans_k must be at least 1")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class KMeansResult:
    centroids: np.ndarray
    labels: np.ndarray
    iterations: int
    converged: bool


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    d = (x * x).sum(1)[:, None] - 2.0 * x @ c.T + (c * c).sum(1)[None, :]
    return np.maximum(d, 0.0)


def _assign(x: np.ndarray, c: np.ndarray, chunk: int = 4096) -> np.ndarray:
    out = np.empty(len(x), dtype=np.int64)
    for s in range(0, len(x), chunk):
        out[s:s + chunk] = _sq_dists(x[s:s + chunk], c).argmin(1)
    return out


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iteration from greedy farthest-point seeds (first seed drawn at random)."""
    x = np.asarray(points, dtype=float)
    n = len(x)
    if k < 1 or k > n:
        raise CapacityError(f"cannot form {k} clusters from {n} points")
    rng = np.random.default_rng(seed)
    chosen = [int(rng.integers(n))]
    nearest = ((x - x[chosen[0]]) ** 2).sum(1)
    for _ in range(1, k):
        nxt = int(nearest.argmax())
        chosen.append(nxt)
        nearest = np.minimum(nearest, ((x - x[nxt]) ** 2).sum(1))
    centroids = x[chosen].copy()
    labels = _assign(x, centroids)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        filled = counts > 0
        centroids[filled] = sums[filled] / counts[filled, None]
        new = _assign(x, centroids)
        if np.array_equal(new, labels):
            converged = True
            break
        labels = new
    return KMeansResult(centroids, labels, it, converged)


def _split_classes(y) -> tuple[int, int]:
    y = np.asarray(y)
    values, counts = np.unique(y, return_counts=True)
    if len(values) != 2:
        raise DomainError(f"need exactly two classes, found {len(values)}")
    order = np.argsort(counts, kind="stable")
    return int(values[order[0]]), int(values[order[1]])


def neighbor_table(points: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other points (Euclidean, ties by index)."""
    d = _sq_dists(points, points)
    np.fill_diagonal(d, np.inf)
    return np.argsort(d, axis=1, kind="stable")[:, :k]


def _interpolate(points: np.ndarray, count: int, k: int, rng: np.random.Generator):
    """``count`` synthetic points x + u (x_nb - x); returns (points, base index, neighbour index)."""
    m = len(points)
    if count <= 0:
        return np.empty((0, points.shape[1])), np.empty(0, int), np.empty(0, int)
    if m == 1:
        idx = np.zeros(count, dtype=int)
        return np.repeat(points, count, axis=0), idx, idx
    k = min(k, m - 1)
    nbrs = neighbor_table(points, k)
    base = rng.integers(m, size=count)
    pick = nbrs[base, rng.integers(k, size=count)]
    u = rng.uniform(0.0, 1.0, size=(count, 1))
    return points[base] + u * (points[pick] - points[base]), base, pick


def smote(X, y, plan: ResamplePlan | None = None, provenance: bool = False):
    """Oversample the minority class up to the majority count.

    With ``provenance=True`` also returns an (n_synthetic, 2) array of input
    row indices: each synthetic row lies on the segment between the two.
    """
    plan = plan or ResamplePlan("smote")
    X, y = np.asarray(X, dtype=float), np.asarray(y)
    minority, majority = _split_classes(y)
    mino = X[y == minority]
    if len(mino) <= plan.k_neighbors:
        raise CapacityError(
            f"minority class has {len(mino)} samples; SMOTE with k={plan.k_neighbors} needs more"
        )
    need = int((y == majority).sum()) - len(mino)
    synth, base, pick = _interpolate(mino, need, plan.k_neighbors, np.random.default_rng(plan.seed))
    rows = np.flatnonzero(y == minority)
    out = np.vstack([X, synth]), np.concatenate([y, np.full(len(synth), minority, dtype=y.dtype)])
    return (*out, np.column_stack([rows[base], rows[pick]])) if provenance else out


def ksmote(X, y, plan: ResamplePlan | None = None, provenance: bool = False):
    """K-means the minority class, then run SMOTE inside each cluster.

    Each cluster's quota is its share of the deficit, rounded up, so the
    minority may end a few samples above the majority.
    """
    plan = plan or ResamplePlan("ksmote")
    X, y = np.asarray(X, dtype=float), np.asarray(y)
    minority, majority = _split_classes(y)
    mino = X[y == minority]
    if len(mino) < plan.kmeans_k:
        raise CapacityError(f"minority class has {len(mino)} samples, fewer than K={plan.kmeans_k}")
    need = int((y == majority).sum()) - len(mino)
    clusters = kmeans(mino, plan.kmeans_k, plan.seed)
    rng = np.random.default_rng([plan.seed, 1])
    rows = np.flatnonzero(y == minority)
    parts, links = [np.empty((0, X.shape[1]))], [np.empty((0, 2), dtype=int)]
    for c in range(plan.kmeans_k):
        local = np.flatnonzero(clusters.labels == c)
        if len(local) == 0:
            continue
        quota = math.ceil(need * len(local) / len(mino))
        synth, base, pick = _interpolate(mino[local], quota, plan.k_neighbors, rng)
        parts.append(synth)
        links.append(np.column_stack([rows[local[base]], rows[local[pick]]]))
    synth = np.vstack(parts)
    out = np.vstack([X, synth]), np.concatenate([y, np.full(len(synth), minority, dtype=y.dtype)])
    return (*out, np.vstack(links)) if provenance else out


def cluster_centroids(X, y, plan: ResamplePlan | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Replace the majority class by K-means centroids, K = minority count."""
    plan = plan or ResamplePlan("cc")
    X, y = np.asarray(X, dtype=float), np.asarray(y)
    minority, majority = _split_classes(y)
    mino = X[y == minority]
    result = kmeans(X[y == majority], len(mino), plan.seed)
    Xo = np.vstack([result.centroids, mino])
    yo = np.concatenate([np.full(len(mino), majority, dtype=y.dtype), np.full(len(mino), minority, dtype=y.dtype)])
    return Xo, yo


def resample(X, y, plan: ResamplePlan) -> tuple[np.ndarray, np.ndarray]:
    if plan.method == "none":
        return np.asarray(X, dtype=float), np.asarray(y)
    return {"smote": smote, "ksmote": ksmote, "cc": cluster_centroids}[plan.method](X, y, plan)
