"""Event-based grouping and sampling.

Centroids are chosen by farthest point sampling on per-dimension scaled
coordinates (D-FPS); neighborhoods are found by nearest neighbours in
feature space (EF-KNN); the next stage's coordinates are the per-group mean
of member coordinates. All distances are squared Euclidean.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor

STD_EPS = 1e-5
# max (centroids x points) distance block held at once in ef_knn
_KNN_BLOCK = 1 << 22


@dataclass(frozen=True)
class SamplingConfig:
    alpha: tuple = (1.0, 1.0, 1.0, 1.0)
    K: int = 24
    groups: int = 512

    def __post_init__(self):
        if any(not np.isfinite(a) or a <= 0 for a in self.alpha):
            raise ValueError(f"alpha components must be finite and positive, got {self.alpha}")
        if self.K < 1 or self.groups < 1:
            raise ValueError("K and groups must be >= 1")

    def validate_for(self, n_points: int) -> None:
        if self.K > n_points or self.groups > n_points:
            raise ShapeError(f"K={self.K} and groups={self.groups} must not exceed {n_points} points")


def d_fps(coords: np.ndarray, alpha, m: int) -> np.ndarray:
    """Farthest point sampling on ``alpha * coords``, seeded at row 0.

    ``coords`` is (n, d) or batched (B, n, d); returns m indices per cloud in
    selection order. Ties go to the lowest row index.
    """
    coords = np.asarray(coords, dtype=np.float64)
    single = coords.ndim == 2
    if single:
        coords = coords[None]
    B, n, d = coords.shape
    if m > n:
        raise ShapeError(f"d_fps: cannot select {m} centroids from {n} points")
    if m < 1:
        raise ShapeError("d_fps: m must be >= 1")
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.shape != (d,) or np.any(alpha <= 0) or not np.all(np.isfinite(alpha)):
        raise ValueError(f"d_fps: alpha must be {d} finite positive values, got {alpha}")
    scaled = coords * alpha
    rows = np.arange(B)
    out = np.zeros((B, m), dtype=np.int64)
    nearest = np.full((B, n), np.inf)
    last = np.zeros(B, dtype=np.int64)
    for i in range(1, m):
        diff = scaled - scaled[rows, last][:, None, :]
        nearest = np.minimum(nearest, np.sum(diff * diff, axis=-1))
        # selected rows stay below every real distance, so duplicates never repeat an index
        nearest[rows, last] = -1.0
        last = np.argmax(nearest, axis=1)
        out[:, i] = last
    return out[0] if single else out


def ef_knn(centroid_features: np.ndarray, features: np.ndarray, K: int) -> np.ndarray:
    """Indices of the K rows of ``features`` closest to each centroid feature.

    Shapes (m, D) and (n, D), or batched (B, m, D) and (B, n, D). Ties go to
    the lower row index; a centroid always finds itself (distance 0) first.
    """
    q = np.asarray(centroid_features, dtype=np.float64)
    f = np.asarray(features, dtype=np.float64)
    single = q.ndim == 2
    if single:
        q, f = q[None], f[None]
    if q.ndim != 3 or f.ndim != 3 or q.shape[0] != f.shape[0] or q.shape[2] != f.shape[2]:
        raise ShapeError(f"ef_knn: incompatible shapes {q.shape} and {f.shape}")
    B, m, D = q.shape
    n = f.shape[1]
    if not 1 <= K <= n:
        raise ShapeError(f"ef_knn: K={K} must lie in [1, {n}]")
    out = np.empty((B, m, K), dtype=np.int64)
    step = max(1, _KNN_BLOCK // max(n, 1))
    for b in range(B):
        fb = f[b]
        fsq = np.einsum("ij,ij->i", fb, fb)
        for s in range(0, m, step):
            out[b, s:s + step] = _knn_block(q[b, s:s + step], fb, fsq, K)
    return out[0] if single else out


def _knn_block(q: np.ndarray, f: np.ndarray, fsq: np.ndarray, K: int) -> np.ndarray:
    """Exact K nearest rows for a block of queries.

    The matmul expansion |q|^2 + |f|^2 - 2 q.f only shortlists candidates: every
    row within a rounding bound of the K-th expanded distance is kept, then
    ranked by its directly computed distance and row index.
    """
    m, n = q.shape[0], f.shape[0]
    qsq = np.einsum("ij,ij->i", q, q)
    approx = qsq[:, None] + fsq[None, :] - 2.0 * (q @ f.T)
    kth = np.partition(approx, K - 1, axis=1)[:, K - 1:K]
    slack = 1e-9 * (qsq[:, None] + fsq.max()) + 1e-300
    rows, cols = np.nonzero(approx <= kth + slack)
    diff = q[rows] - f[cols]
    exact = np.einsum("ij,ij->i", diff, diff)
    order = np.lexsort((cols, exact, rows))
    rows, cols = rows[order], cols[order]
    start = np.searchsorted(rows, np.arange(m))
    take = start[:, None] + np.arange(K)
    return cols[take]


def group_points(coords: np.ndarray, index: np.ndarray) -> np.ndarray:
    """Gather coordinates: (B, n, c) with (B, m, K) -> (B, m, K, c)."""
    return np.take_along_axis(coords[:, None, :, :], index[..., None], axis=2)


def evolve_coords(group_coords: np.ndarray) -> np.ndarray:
    """Next-stage coordinates: mean of each group's members over the K axis."""
    return np.asarray(group_coords).mean(axis=-2)


def build_group_features(group_coords, group_features: Tensor, centroid_features: Tensor,
                         eps: float = STD_EPS) -> Tensor:
    """(..., K, D) features and (..., K, c) coordinates -> (..., K, 2D + c).

    Members are concatenated with their coordinates, centred on the group
    mean, divided by the group's deviation around that mean (one scalar per
    group, plus ``eps``), then concatenated with the broadcast centroid
    features.
    """
    group_features = ad.as_tensor(group_features)
    centroid_features = ad.as_tensor(centroid_features)
    gc = ad.as_tensor(group_coords)
    if gc.shape[:-1] != group_features.shape[:-1]:
        raise ShapeError(f"build_group_features: coords {gc.shape} vs features {group_features.shape}")
    if centroid_features.shape != group_features.shape[:-2] + group_features.shape[-1:]:
        raise ShapeError(f"build_group_features: centroid features {centroid_features.shape} "
                         f"vs group features {group_features.shape}")
    x = ad.concat([group_features, gc], axis=-1)
    M = ad.mean(x, axis=-2, keepdims=True)
    centered = x - M
    std = ad.sqrt(ad.mean(centered * centered, axis=(-2, -1), keepdims=True))
    standardized = centered / (std + eps)
    fc = ad.reshape(centroid_features, centroid_features.shape[:-1] + (1, centroid_features.shape[-1]))
    fc = ad.broadcast_to(fc, group_features.shape)
    return ad.concat([standardized, fc], axis=-1)
