"""Topic clustering: k-means with restarts, cluster-count search and extras.

The two-step parameter search first brackets the number of clusters on the
raw embeddings (silhouette argmax for the lower bound, elbow of the
within-cluster sum of squares for the upper bound), then scores a grid of
reduction dimension times cluster count and keeps the cell with the best
silhouette. DBSCAN and agglomerative clustering are included for the
method comparison benchmark.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin

from .embedding import EmbeddingMatrix
from .errors import ConfigError, DatasetTooSmall
from .reduction import LayoutConfig, ReducedMatrix, umap_reduce
from .validation import rng_from_seed, stable_seed

_MAX_LLOYD_ITER = 300
_SHIFT_TOL = 1e-6


@dataclass
class ClusterResult:
    """K-means output: labels, centroids and quality scores."""

    assignments: np.ndarray
    centroids: np.ndarray
    wcss: float
    silhouette: float
    wcss_history: list[float] = field(default_factory=list, repr=False)


@dataclass(frozen=True)
class RangeEstimate:
    lower: int
    upper: int

    def __post_init__(self):
        if not 2 <= self.lower <= self.upper:
            raise ConfigError(f"invalid cluster range [{self.lower}, {self.upper}]")


@dataclass(frozen=True)
class GridSelection:
    embed_method: str
    dim: int
    k: int
    silhouette: float


@dataclass
class KnowledgeTopics:
    """Pseudo-label topic index for every training report."""

    topics: dict[str, int]
    k: int

    def to_json(self) -> dict:
        return {"k": self.k, "topics": dict(sorted(self.topics.items()))}

    @classmethod
    def from_json(cls, payload: Mapping) -> "KnowledgeTopics":
        return cls(topics={str(k): int(v) for k, v in payload["topics"].items()},
                   k=int(payload["k"]))


def _points_of(points) -> np.ndarray:
    if isinstance(points, ReducedMatrix):
        points = points.rows
    elif isinstance(points, EmbeddingMatrix):
        points = points.rows
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise ConfigError("clustering expects a non-empty 2-D matrix")
    return x


def _pairwise_distances(x: np.ndarray) -> np.ndarray:
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] - 2.0 * (x @ x.T) + sq[None, :], 0.0)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(d2)


def _kmeans_pp_init(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centroids = np.empty((k, x.shape[1]))
    centroids[0] = x[rng.integers(n)]
    d2 = np.sum((x - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            centroids[j] = x[rng.integers(n)]
            continue
        centroids[j] = x[rng.choice(n, p=d2 / total)]
        d2 = np.minimum(d2, np.sum((x - centroids[j]) ** 2, axis=1))
    return centroids


def _sq_dists(x: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    sq_x = np.sum(x * x, axis=1)
    sq_c = np.sum(centroids * centroids, axis=1)
    return np.maximum(sq_x[:, None] - 2.0 * (x @ centroids.T) + sq_c[None, :], 0.0)


def _lloyd(x: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    n, k = x.shape[0], centroids.shape[0]
    history: list[float] = []
    assignments = np.zeros(n, dtype=np.int64)
    for _ in range(_MAX_LLOYD_ITER):
        d2 = _sq_dists(x, centroids)
        assignments = np.argmin(d2, axis=1)
        # Repair empty clusters by reseeding on the globally farthest point
        # from its assigned centroid (donor cluster must keep a member).
        for empty in range(k):
            while not np.any(assignments == empty):
                own = d2[np.arange(n), assignments].copy()
                counts = np.bincount(assignments, minlength=k)
                own[counts[assignments] <= 1] = -1.0
                far = int(np.argmax(own))
                centroids[empty] = x[far]
                assignments[far] = empty
                d2[:, empty] = np.sum((x - centroids[empty]) ** 2, axis=1)
        wcss = float(d2[np.arange(n), assignments].sum())
        if history and wcss > history[-1] + 1e-9:
            raise AssertionError("wcss increased across a Lloyd iteration")
        history.append(wcss)
        new_centroids = centroids.copy()
        for j in range(k):
            members = assignments == j
            new_centroids[j] = x[members].mean(axis=0)
        shift = float(np.max(np.linalg.norm(new_centroids - centroids, axis=1)))
        centroids = new_centroids
        if shift < _SHIFT_TOL:
            break
    d2 = _sq_dists(x, centroids)
    assignments = np.argmin(d2, axis=1)
    wcss = float(d2[np.arange(n), assignments].sum())
    history.append(wcss)
    return assignments, centroids, wcss, history


def kmeans(points, k: int, seed: int = 0, restarts: int = 10) -> ClusterResult:
    """Best-of-restarts k-means with k-means++ seeding.

    Lloyd iterations stop when the largest centroid shift drops below 1e-6
    or after 300 rounds; the restart with the lowest within-cluster sum of
    squares wins. Deterministic for a fixed seed.
    """
    x = _points_of(points)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= n, got k={k}, n={n}")
    if restarts < 1:
        raise ConfigError("restarts must be >= 1")
    rng = rng_from_seed(seed)
    best = None
    for _ in range(restarts):
        init = _kmeans_pp_init(x, k, rng)
        assignments, centroids, wcss, history = _lloyd(x, init.copy())
        if best is None or wcss < best[2]:
            best = (assignments, centroids, wcss, history)
    assignments, centroids, wcss, history = best
    score = silhouette_score(x, assignments) if k >= 2 else 0.0
    return ClusterResult(
        assignments=assignments,
        centroids=centroids.astype(np.float32),
        wcss=wcss,
        silhouette=score,
        wcss_history=history,
    )


def silhouette_score(points, assignments) -> float:
    """Mean silhouette ``(b - a) / max(a, b)`` over all points.

    ``a`` is the mean distance to the point's own cluster (excluding itself),
    ``b`` the smallest mean distance to any other cluster. Points in
    singleton clusters score 0, as do points where both means are zero.
    """
    x = _points_of(points)
    labels = np.asarray(assignments, dtype=np.int64)
    if labels.shape != (x.shape[0],):
        raise ConfigError("assignments must be one label per point")
    clusters = np.unique(labels)
    if clusters.size < 2:
        raise ConfigError("silhouette needs at least 2 clusters")
    dist = _pairwise_distances(x)
    n = x.shape[0]
    sums = np.stack([dist[:, labels == c].sum(axis=1) for c in clusters], axis=1)
    sizes = np.array([(labels == c).sum() for c in clusters])
    own = np.searchsorted(clusters, labels)
    scores = np.zeros(n)
    for i in range(n):
        size_own = sizes[own[i]]
        if size_own == 1:
            continue
        a = sums[i, own[i]] / (size_own - 1)
        other = [sums[i, j] / sizes[j] for j in range(clusters.size) if j != own[i]]
        b = min(other)
        denom = max(a, b)
        scores[i] = 0.0 if denom == 0.0 else (b - a) / denom
    return float(scores.mean())


def wcss_elbow(k_values: Sequence[int], wcss_values: Sequence[float]) -> int:
    """Elbow via the largest perpendicular distance to the endpoint chord.

    Both axes are min-max normalized first so the detector is scale free.
    """
    ks = np.asarray(k_values, dtype=np.float64)
    ws = np.asarray(wcss_values, dtype=np.float64)
    if ks.size < 3:
        return int(k_values[0])
    kn = (ks - ks[0]) / (ks[-1] - ks[0])
    span = ws.max() - ws.min()
    wn = np.zeros_like(ws) if span == 0 else (ws - ws.min()) / span
    p0 = np.array([kn[0], wn[0]])
    p1 = np.array([kn[-1], wn[-1]])
    chord = p1 - p0
    norm = np.linalg.norm(chord)
    rel = np.stack([kn, wn], axis=1) - p0
    distance = np.abs(rel[:, 0] * chord[1] - rel[:, 1] * chord[0]) / norm
    return int(k_values[int(np.argmax(distance))])


def coarse_range(
    matrix, k_min: int = 2, k_max: int = 20, seed: int = 0, restarts: int = 10
) -> RangeEstimate:
    """Bracket the cluster count on raw embeddings.

    The lower bound is the silhouette-maximizing K; the upper bound is the
    elbow of the wcss curve over the same sweep. Bounds are swapped if the
    silhouette peak lands above the elbow.
    """
    x = _points_of(matrix)
    if x.shape[0] <= k_max:
        raise DatasetTooSmall(f"need more than {k_max} points, got {x.shape[0]}")
    k_values = list(range(k_min, k_max + 1))
    silhouettes, wcss_values = [], []
    for k in k_values:
        result = kmeans(x, k, seed=stable_seed(seed, "coarse", k), restarts=restarts)
        silhouettes.append(result.silhouette)
        wcss_values.append(result.wcss)
    lower = k_values[int(np.argmax(silhouettes))]
    upper = wcss_elbow(k_values, wcss_values)
    if lower > upper:
        lower, upper = upper, lower
    return RangeEstimate(lower=lower, upper=upper)


def sample_k_values(
    bounds: RangeEstimate, count: int = 4, k_min: int = 2, k_max: int = 20
) -> list[int]:
    """Uniformly sample ``count`` distinct cluster counts from the range.

    Endpoints are included. Rounding collisions are padded from unused
    integers inside the range, then from just outside it (above first),
    staying within [k_min, k_max].
    """
    raw = np.linspace(bounds.lower, bounds.upper, count)
    chosen: list[int] = []
    for value in raw:
        k = int(np.floor(value + 0.5))
        if k not in chosen:
            chosen.append(k)
    inside = [k for k in range(bounds.lower, bounds.upper + 1) if k not in chosen]
    while len(chosen) < count and inside:
        chosen.append(inside.pop(0))
    above = bounds.upper + 1
    below = bounds.lower - 1
    while len(chosen) < count and (above <= k_max or below >= k_min):
        if above <= k_max:
            chosen.append(above)
            above += 1
        elif below >= k_min:
            chosen.append(below)
            below -= 1
    return sorted(chosen)


@dataclass
class HeatmapGrid:
    """Silhouette scores over (cluster count, reduction dim) for one method."""

    method: str
    dims: tuple[int, ...]
    k_values: tuple[int, ...]
    scores: np.ndarray  # shape (len(k_values), len(dims)); NaN = cell skipped


@dataclass
class DistillResult:
    selection: GridSelection
    topics: KnowledgeTopics
    heatmaps: dict[str, HeatmapGrid]
    ranges: dict[str, RangeEstimate]


def _beats(candidate: tuple[float, int, int], best: tuple[float, int, int] | None) -> bool:
    """Grid tie rule: higher silhouette, then larger dim, then larger K."""
    return best is None or candidate > best


def grid_select(
    embeddings: Mapping[str, EmbeddingMatrix],
    dims: Sequence[int] = (2, 5, 10, 50),
    seed: int = 0,
    k_min: int = 2,
    k_max: int = 20,
    restarts: int = 10,
    layout: LayoutConfig = LayoutConfig(),
    threads: int = 1,
) -> DistillResult:
    """Run the two-step cluster search over every embedding method.

    Per method: bracket K on the raw matrix, reduce to each grid dimension,
    cluster each sampled K and record the silhouette. The best cell across
    all methods wins; exact ties prefer the larger dimension, then the
    larger K. Reports are ordered by id internally so the outcome does not
    depend on corpus order.
    """
    ranges: dict[str, RangeEstimate] = {}
    heatmaps: dict[str, HeatmapGrid] = {}
    best_key: tuple[float, int, int] | None = None
    best_cell = None

    for method in sorted(embeddings):
        matrix = embeddings[method]
        order = np.argsort(np.asarray(matrix.report_ids))
        ids = tuple(matrix.report_ids[i] for i in order)
        rows = matrix.rows[order]
        bounds = coarse_range(rows, k_min=k_min, k_max=k_max,
                              seed=stable_seed(seed, method), restarts=restarts)
        ranges[method] = bounds
        k_values = sample_k_values(bounds, k_min=k_min, k_max=k_max)
        scores = np.full((len(k_values), len(dims)), np.nan)

        def run_cell(args):
            ki, di = args
            k, dim = k_values[ki], dims[di]
            if dim >= rows.shape[1]:
                return ki, di, None
            reduced = umap_reduce(
                rows,
                LayoutConfig(
                    n_neighbors=layout.n_neighbors,
                    min_dist=layout.min_dist,
                    target_dim=dim,
                    n_epochs=layout.n_epochs,
                    negative_samples=layout.negative_samples,
                    seed=stable_seed(seed, method, dim),
                ),
            )
            result = kmeans(reduced, k, seed=stable_seed(seed, method, dim, k),
                            restarts=restarts)
            return ki, di, result

        cells = [(ki, di) for di in range(len(dims)) for ki in range(len(k_values))]
        if threads > 1:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                outcomes = list(pool.map(run_cell, cells))
        else:
            outcomes = [run_cell(c) for c in cells]

        for ki, di, result in outcomes:
            if result is None:
                continue
            scores[ki, di] = result.silhouette
            key = (result.silhouette, dims[di], k_values[ki])
            if _beats(key, best_key):
                best_key = key
                best_cell = (method, dims[di], k_values[ki], result, ids)
        heatmaps[method] = HeatmapGrid(
            method=method, dims=tuple(dims), k_values=tuple(k_values), scores=scores
        )

    if best_cell is None:
        raise ConfigError("no grid cell could be evaluated; all dims exceed the embedding width")
    method, dim, k, result, ids = best_cell
    selection = GridSelection(embed_method=method, dim=dim, k=k,
                              silhouette=float(result.silhouette))
    topics = KnowledgeTopics(
        topics={rid: int(label) for rid, label in zip(ids, result.assignments)}, k=k
    )
    return DistillResult(selection=selection, topics=topics, heatmaps=heatmaps, ranges=ranges)


# --------------------------------------------------------------------------
# Comparison methods for the clustering benchmark
# --------------------------------------------------------------------------


def dbscan(points, eps: float, min_pts: int) -> np.ndarray:
    """Density clustering; returns labels with noise marked as -1.

    A point is a core point when at least ``min_pts`` points (itself
    included) lie within ``eps``; clusters are the connected components of
    core points plus their border points.
    """
    if eps <= 0 or min_pts < 1:
        raise ConfigError("dbscan needs eps > 0 and min_pts >= 1")
    x = _points_of(points)
    n = x.shape[0]
    dist = _pairwise_distances(x)
    neighbors = [np.flatnonzero(dist[i] <= eps) for i in range(n)]
    core = np.array([len(nb) >= min_pts for nb in neighbors])
    labels = np.full(n, -1, dtype=np.int64)
    cluster = 0
    for start in range(n):
        if labels[start] != -1 or not core[start]:
            continue
        queue = [start]
        labels[start] = cluster
        while queue:
            point = queue.pop()
            if not core[point]:
                continue
            for nb in neighbors[point]:
                if labels[nb] == -1:
                    labels[nb] = cluster
                    queue.append(nb)
        cluster += 1
    return labels


def agglomerative(points, k: int, linkage: str = "average") -> np.ndarray:
    """Bottom-up merging until ``k`` clusters remain."""
    x = _points_of(points)
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ConfigError(f"need 1 <= k <= n, got k={k}, n={n}")
    if linkage not in ("average", "single", "complete"):
        raise ConfigError(f"unknown linkage {linkage!r}")
    dist = _pairwise_distances(x)
    np.fill_diagonal(dist, np.inf)
    active = np.ones(n, dtype=bool)
    sizes = np.ones(n)
    members = {i: [i] for i in range(n)}
    for _ in range(n - k):
        masked = np.where(active[:, None] & active[None, :], dist, np.inf)
        i, j = np.unravel_index(np.argmin(masked), masked.shape)
        if i > j:
            i, j = j, i
        if linkage == "average":
            merged = (sizes[i] * dist[i] + sizes[j] * dist[j]) / (sizes[i] + sizes[j])
        elif linkage == "single":
            merged = np.minimum(dist[i], dist[j])
        else:
            merged = np.maximum(dist[i], dist[j])
        dist[i] = merged
        dist[:, i] = merged
        dist[i, i] = np.inf
        active[j] = False
        sizes[i] += sizes[j]
        members[i].extend(members.pop(j))
    labels = np.zeros(n, dtype=np.int64)
    for new_label, root in enumerate(sorted(members)):
        labels[members[root]] = new_label
    return labels


class KMeans(ClusterMixin, BaseEstimator):
    """Estimator facade over :func:`kmeans` with scikit-learn naming."""

    def __init__(self, n_clusters: int = 8, random_state: int = 0, n_init: int = 10):
        self.n_clusters = n_clusters
        self.random_state = random_state
        self.n_init = n_init

    def fit(self, X, y=None):
        result = kmeans(X, self.n_clusters, seed=self.random_state, restarts=self.n_init)
        self.labels_ = result.assignments
        self.cluster_centers_ = result.centroids
        self.inertia_ = result.wcss
        self.silhouette_ = result.silhouette
        return self

    def predict(self, X):
        x = _points_of(X)
        return np.argmin(_sq_dists(x, self.cluster_centers_.astype(np.float64)), axis=1)
