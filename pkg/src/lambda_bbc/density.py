"""Adaptive-bandwidth Gaussian KDE over the sample set.

The bandwidth at a query is the distance to its k-th nearest sample (the
query itself excluded when it coincides with a sample).  A KD-tree over a
snapshot answers neighbor queries; points appended after the snapshot sit
in a brute-force buffer until the next rebuild, so answers stay exact.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.spatial import cKDTree

MIN_BANDWIDTH = 1e-9
# Gaussian terms beyond this many bandwidths are below 1e-17 of the peak.
_CUTOFF = 9.0
# distances at or below this count as "the query is this sample"
_SELF_TOL = 1e-12


def default_k(dim: int) -> int:
    return 8 if dim <= 3 else 16


class DensityModel:
    """Exact k-NN adaptive KDE in normalized coordinates.

    Parameters
    ----------
    points : (n, d) array
        Normalized sample points.
    k : int
        Neighbor rank that sets the bandwidth.
    fallback_bandwidth : float
        Bandwidth used when the model holds a single point.
    """

    def __init__(self, points, k: int, fallback_bandwidth: float = 0.1):
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[0] < 1:
            raise ValueError("density model needs at least one point")
        if k < 1:
            raise ValueError("k must be >= 1")
        self.k = int(k)
        self.dim = pts.shape[1]
        self.fallback_bandwidth = float(fallback_bandwidth)
        self._snapshot = pts.copy()
        self._tree = cKDTree(self._snapshot)
        self._pending = np.empty((0, self.dim))
        self.staleness = 0
        self._norm = (2.0 * math.pi) ** (-self.dim / 2.0)

    @property
    def n(self) -> int:
        return self._snapshot.shape[0] + self._pending.shape[0]

    @property
    def points(self) -> np.ndarray:
        if not self._pending.size:
            return self._snapshot
        return np.vstack([self._snapshot, self._pending])

    def add(self, points) -> None:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        self._pending = np.vstack([self._pending, pts])
        self.staleness += pts.shape[0]

    def rebuild(self) -> "DensityModel":
        return DensityModel(self.points, self.k, self.fallback_bandwidth)

    # -- neighbor queries -------------------------------------------------

    def _knn_dists(self, q: np.ndarray, kk: int) -> np.ndarray:
        """Sorted distances from each query to its ``kk`` nearest points."""
        ns = self._snapshot.shape[0]
        kt = min(kk, ns)
        d, _ = self._tree.query(q, k=kt)
        d = np.asarray(d).reshape(q.shape[0], kt)
        if self._pending.shape[0]:
            dp = np.sqrt(((q[:, None, :] - self._pending[None, :, :]) ** 2).sum(-1))
            d = np.sort(np.hstack([d, dp]), axis=1)[:, :kk]
        return d

    def bandwidth_at(self, query) -> np.ndarray:
        """Per-query bandwidth ``h`` (array, one per query row)."""
        q = np.atleast_2d(np.asarray(query, dtype=float))
        n = self.n
        if n == 1:
            return np.full(q.shape[0], self.fallback_bandwidth)
        d = self._knn_dists(q, min(self.k + 1, n))
        is_self = d[:, 0] <= _SELF_TOL
        # drop the coincident sample itself; otherwise use the first k
        h = np.empty(q.shape[0])
        cols = d.shape[1]
        take_self = np.minimum(self.k, cols - 1)
        take_other = min(self.k, cols) - 1
        h[is_self] = d[is_self, take_self]
        h[~is_self] = d[~is_self, take_other]
        return np.maximum(h, MIN_BANDWIDTH)

    def density_at(self, query) -> np.ndarray:
        """KDE value at each query row; strictly positive."""
        q = np.atleast_2d(np.asarray(query, dtype=float))
        h = self.bandwidth_at(q)
        n = self.n
        out = np.empty(q.shape[0])
        radius = _CUTOFF * h
        lists = self._tree.query_ball_point(q, radius)
        snap = self._snapshot
        for i, idx in enumerate(lists):
            r2 = ((snap[idx] - q[i]) ** 2).sum(-1)
            out[i] = np.exp(-0.5 * r2 / h[i] ** 2).sum()
        if self._pending.shape[0]:
            r2 = ((q[:, None, :] - self._pending[None, :, :]) ** 2).sum(-1)
            out += np.exp(-0.5 * r2 / h[:, None] ** 2).sum(1)
        out *= self._norm / (n * h**self.dim)
        # far from every sample the truncated sum underflows; keep a floor
        return np.maximum(out, np.finfo(float).tiny)


def build_index(points, k: int | None = None, fallback_bandwidth: float = 0.1) -> DensityModel:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if pts.shape[0] == 0:
        raise ValueError("cannot build a density model from an empty point set")
    if k is None:
        k = default_k(pts.shape[1])
    if pts.shape[0] > 1:
        k = min(k, pts.shape[0] - 1)
    return DensityModel(pts, k, fallback_bandwidth)


def bandwidth_at(model: DensityModel, query) -> np.ndarray:
    return model.bandwidth_at(query)


def density_at(model: DensityModel, query) -> np.ndarray:
    return model.density_at(query)


def refresh_policy(model: DensityModel, rebuild_interval: int) -> bool:
    return model.staleness >= rebuild_interval
