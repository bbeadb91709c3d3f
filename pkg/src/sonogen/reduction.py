"""Nonlinear dimension reduction for report embeddings.

The reducer follows the classic manifold-layout recipe: exact k-nearest
neighbours, per-point bandwidth calibration by binary search, symmetrized
fuzzy union of the directed neighbourhood weights, then stochastic gradient
descent on a cross-entropy layout objective with negative sampling. A linear
PCA reducer is provided as an independent reference for tests.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import curve_fit
from sklearn.base import BaseEstimator

from .embedding import EmbeddingMatrix
from .errors import ConfigError, FitError, Unsupported
from .validation import as_float32, rng_from_seed

_SMOOTH_TOL = 1e-5
_MIN_SIGMA_SCALE = 1e-3
_GRAD_CLIP = 4.0
_CHUNK = 256


@dataclass(frozen=True)
class LayoutConfig:
    """Hyperparameters of the manifold layout."""

    n_neighbors: int = 15
    min_dist: float = 0.1
    target_dim: int = 2
    n_epochs: int = 200
    negative_samples: int = 5
    seed: int = 0


@dataclass
class ReducedMatrix:
    rows: np.ndarray
    config: LayoutConfig

    def __post_init__(self):
        self.rows = as_float32(self.rows, "rows", ndim=2)


def fit_curve(min_dist: float, spread: float = 1.0) -> tuple[float, float]:
    """Least-squares fit of ``1 / (1 + a * d^(2b))`` to the layout target.

    The target is 1 up to ``min_dist`` and an exponential decay beyond it,
    sampled on 300 points over ``[0, 3 * spread]``.
    """
    if not 0.0 < min_dist < 1.0:
        raise ConfigError(f"min_dist must lie in (0, 1), got {min_dist}")

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xs = np.linspace(0.0, spread * 3.0, 300)
    ys = np.where(xs <= min_dist, 1.0, np.exp(-(xs - min_dist) / spread))
    try:
        params, _ = curve_fit(curve, xs, ys)
    except RuntimeError as exc:
        raise FitError(f"attraction curve fit did not converge: {exc}") from exc
    return float(params[0]), float(params[1])


def knn_graph(points: np.ndarray, n_neighbors: int) -> tuple[np.ndarray, np.ndarray]:
    """Exact Euclidean k-nearest neighbours (self excluded).

    Returns (indices, distances), each of shape (n, n_neighbors) with
    distances sorted ascending.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if not 2 <= n_neighbors < n:
        raise ConfigError(f"need 2 <= n_neighbors < n, got k={n_neighbors}, n={n}")
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] - 2.0 * (x @ x.T) + sq[None, :], 0.0)
    np.fill_diagonal(d2, np.inf)
    idx = np.argsort(d2, axis=1, kind="stable")[:, :n_neighbors]
    dists = np.sqrt(np.take_along_axis(d2, idx, axis=1))
    return idx, dists


def smooth_knn_weights(distances: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Calibrate per-point bandwidths and return membership weights.

    For each point the offset ``rho`` is the distance to its nearest
    neighbour and ``sigma`` is found by binary search so that
    ``sum_j exp(-max(0, d_ij - rho_i) / sigma_i)`` equals ``log2(k)``.
    Returns (weights, rho, sigma).
    """
    n, k = distances.shape
    target = np.log2(k)
    rho = distances[:, 0].copy()
    sigma = np.ones(n)
    mean_all = distances.mean() if distances.size else 0.0
    for i in range(n):
        lo, hi, mid = 0.0, np.inf, 1.0
        d = np.maximum(distances[i] - rho[i], 0.0)
        for _ in range(64):
            total = np.exp(-d / mid).sum()
            if abs(total - target) < _SMOOTH_TOL:
                break
            if total > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                mid = mid * 2.0 if hi == np.inf else (lo + hi) / 2.0
        row_mean = distances[i].mean()
        floor = _MIN_SIGMA_SCALE * (row_mean if rho[i] > 0.0 else mean_all)
        sigma[i] = max(mid, floor, 1e-12)
    weights = np.exp(-np.maximum(distances - rho[:, None], 0.0) / sigma[:, None])
    return weights, rho, sigma


def fuzzy_union(indices: np.ndarray, weights: np.ndarray, n: int) -> np.ndarray:
    """Symmetrize directed membership weights via ``a + b - a*b``."""
    w = np.zeros((n, n))
    rows = np.repeat(np.arange(n), indices.shape[1])
    w[rows, indices.reshape(-1)] = weights.reshape(-1)
    return w + w.T - w * w.T


def _layout_edges(graph: np.ndarray, n_epochs: int):
    """Edge list and per-edge sampling cadence for the SGD layout."""
    pruned = graph.copy()
    w_max = pruned.max()
    pruned[pruned < w_max / float(n_epochs)] = 0.0
    heads, tails = np.nonzero(pruned)
    weights = pruned[heads, tails]
    epochs_per_sample = w_max / weights
    return heads, tails, epochs_per_sample


def optimize_layout(
    init: np.ndarray,
    heads: np.ndarray,
    tails: np.ndarray,
    epochs_per_sample: np.ndarray,
    a: float,
    b: float,
    n_epochs: int,
    negative_samples: int,
    rng: np.random.Generator,
    initial_lr: float = 1.0,
) -> np.ndarray:
    """SGD on the fuzzy cross-entropy layout objective.

    Edges fire on their sampling cadence and attract their head towards the
    tail along the gradient of ``1/(1 + a d^(2b))``; each firing also repels
    the head from ``negative_samples`` uniformly drawn points. Gradients are
    clipped to +-4 and the learning rate decays linearly to zero, which keeps
    the updates finite for any input scale.
    """
    emb = np.asarray(init, dtype=np.float64).copy()
    n = emb.shape[0]
    epochs_per_negative = epochs_per_sample / negative_samples
    next_sample = epochs_per_sample.copy()
    next_negative = epochs_per_negative.copy()

    for epoch in range(n_epochs):
        alpha = initial_lr * (1.0 - epoch / float(n_epochs))
        fired = np.flatnonzero(next_sample <= epoch)
        for lo in range(0, fired.size, _CHUNK):
            chunk = fired[lo : lo + _CHUNK]
            h, t = heads[chunk], tails[chunk]
            diff = emb[h] - emb[t]
            d2 = np.einsum("ij,ij->i", diff, diff)
            coeff = np.zeros_like(d2)
            pos = d2 > 0.0
            coeff[pos] = (-2.0 * a * b * d2[pos] ** (b - 1.0)) / (a * d2[pos] ** b + 1.0)
            np.add.at(emb, h, alpha * np.clip(coeff[:, None] * diff, -_GRAD_CLIP, _GRAD_CLIP))

            n_neg = ((epoch - next_negative[chunk]) / epochs_per_negative[chunk]).astype(int)
            n_neg = np.maximum(n_neg, 0)
            rep_h = np.repeat(h, n_neg)
            rep_t = rng.integers(0, n, size=int(n_neg.sum()))
            diff = emb[rep_h] - emb[rep_t]
            d2 = np.einsum("ij,ij->i", diff, diff)
            grad = np.full_like(diff, _GRAD_CLIP)
            pos = d2 > 0.0
            coeff = (2.0 * b) / ((0.001 + d2[pos]) * (a * d2[pos] ** b + 1.0))
            grad[pos] = np.clip(coeff[:, None] * diff[pos], -_GRAD_CLIP, _GRAD_CLIP)
            grad[rep_h == rep_t] = 0.0
            np.add.at(emb, rep_h, alpha * grad)

            next_sample[chunk] += epochs_per_sample[chunk]
            next_negative[chunk] += n_neg * epochs_per_negative[chunk]
    return emb


def umap_reduce(matrix: EmbeddingMatrix | np.ndarray, config: LayoutConfig) -> ReducedMatrix:
    """Reduce embedding rows to ``config.target_dim`` dimensions."""
    x = matrix.rows if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    x = as_float32(x, "matrix", ndim=2)
    n, width = x.shape
    if config.n_epochs < 1:
        raise ConfigError("n_epochs must be >= 1")
    if width <= config.target_dim:
        raise ConfigError(f"target_dim {config.target_dim} must be < input width {width}")
    idx, dists = knn_graph(x, config.n_neighbors)
    weights, _, _ = smooth_knn_weights(dists)
    graph = fuzzy_union(idx, weights, n)
    heads, tails, cadence = _layout_edges(graph, config.n_epochs)
    a, b = fit_curve(config.min_dist)
    rng = rng_from_seed(config.seed)
    init = rng.uniform(-10.0, 10.0, size=(n, config.target_dim))
    emb = optimize_layout(
        init, heads, tails, cadence, a, b,
        config.n_epochs, config.negative_samples, rng,
    )
    return ReducedMatrix(rows=emb.astype(np.float32), config=config)


class UmapReducer(BaseEstimator):
    """Estimator wrapper around :func:`umap_reduce`.

    Like other embedding-style estimators this supports ``fit`` and
    ``fit_transform`` only; embedding unseen points is out of scope.
    """

    def __init__(
        self,
        n_neighbors: int = 15,
        min_dist: float = 0.1,
        target_dim: int = 2,
        n_epochs: int = 200,
        negative_samples: int = 5,
        seed: int = 0,
    ):
        self.n_neighbors = n_neighbors
        self.min_dist = min_dist
        self.target_dim = target_dim
        self.n_epochs = n_epochs
        self.negative_samples = negative_samples
        self.seed = seed

    def _config(self) -> LayoutConfig:
        return LayoutConfig(
            n_neighbors=self.n_neighbors,
            min_dist=self.min_dist,
            target_dim=self.target_dim,
            n_epochs=self.n_epochs,
            negative_samples=self.negative_samples,
            seed=self.seed,
        )

    def fit(self, X, y=None):
        self.embedding_ = umap_reduce(X, self._config()).rows
        return self

    def fit_transform(self, X, y=None):
        return self.fit(X).embedding_

    def transform(self, X):
        raise Unsupported("embedding new points is not supported; use fit_transform")


class PcaReducer(BaseEstimator):
    """Mean-centered projection onto the top principal components."""

    def __init__(self, target_dim: int = 2):
        self.target_dim = target_dim

    def fit(self, X, y=None):
        x = np.asarray(X, dtype=np.float64)
        if x.ndim != 2:
            raise ConfigError("PcaReducer expects a 2-D matrix")
        n, width = x.shape
        if not 1 <= self.target_dim <= min(n, width):
            raise ConfigError(
                f"target_dim must be in [1, min(n, width)] = [1, {min(n, width)}]"
            )
        self.mean_ = x.mean(axis=0)
        _, _, vt = np.linalg.svd(x - self.mean_, full_matrices=False)
        components = vt[: self.target_dim]
        # Deterministic sign: the largest-magnitude loading of each component
        # is made positive so repeated fits agree bitwise.
        flips = np.sign(components[np.arange(components.shape[0]),
                                   np.argmax(np.abs(components), axis=1)])
        self.components_ = components * flips[:, None]
        return self

    def transform(self, X):
        x = np.asarray(X, dtype=np.float64)
        return ((x - self.mean_) @ self.components_.T).astype(np.float32)

    def inverse_transform(self, Z):
        z = np.asarray(Z, dtype=np.float64)
        return (z @ self.components_ + self.mean_).astype(np.float32)

    def reconstruction_error(self, X) -> float:
        x = np.asarray(X, dtype=np.float64)
        back = (self.transform(X).astype(np.float64) @ self.components_) + self.mean_
        return float(np.mean((x - back) ** 2))


def pca_reduce(matrix: EmbeddingMatrix | np.ndarray, target_dim: int) -> ReducedMatrix:
    x = matrix.rows if isinstance(matrix, EmbeddingMatrix) else np.asarray(matrix)
    rows = PcaReducer(target_dim=target_dim).fit(x).transform(x)
    config = replace(LayoutConfig(), target_dim=target_dim)
    return ReducedMatrix(rows=rows, config=config)
