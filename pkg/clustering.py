"""
DBSCAN over small dense feature matrices.

Used for per-cycle network-selection archetypes (Euclidean over normalized
count vectors) and for payload clustering (byte-wise Hamming distance).
Clusters are numbered in the order their first core point appears; a border
point reachable from several clusters stays with the lowest cluster id.
"""

import logging
from collections import deque
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

log = logging.getLogger("dbscan")

NOISE = -1

Metric = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class ClusteringParams:
    eps: float
    min_pts: int

    def __post_init__(self):
        if self.eps <= 0:
            raise ValueError(f"eps must be positive, got {self.eps}")
        if self.min_pts < 2:
            raise ValueError(f"min_pts must be at least 2, got {self.min_pts}")


def euclidean(block: np.ndarray, points: np.ndarray) -> np.ndarray:
    diff = block[:, np.newaxis, :].astype(np.float64) - points[np.newaxis, :, :].astype(np.float64)
    return np.sqrt((diff ** 2).sum(axis=2))


class DBSCAN:
    """DBSCAN with a pluggable pairwise metric; min_pts counts the point itself."""

    def __init__(self, params: ClusteringParams, metric: Metric = euclidean, chunk_size: int = 500):
        self.params = params
        self.metric = metric
        self.chunk_size = chunk_size
        self.labels: Optional[np.ndarray] = None
        self.core_sample_indices: Optional[np.ndarray] = None
        self.n_clusters = 0

    def neighborhoods(self, X: np.ndarray) -> List[np.ndarray]:
        out: List[np.ndarray] = []
        n = X.shape[0]
        for start in range(0, n, self.chunk_size):
            end = min(start + self.chunk_size, n)
            dists = self.metric(X[start:end], X)
            for i in range(end - start):
                out.append(np.where(dists[i] <= self.params.eps + 1e-12)[0])
        return out

    def fit(self, X: np.ndarray) -> "DBSCAN":
        n = X.shape[0]
        labels = np.full(n, NOISE, dtype=int)
        if n == 0:
            self.labels = labels
            self.core_sample_indices = np.array([], dtype=int)
            self.n_clusters = 0
            return self

        hoods = self.neighborhoods(X)
        is_core = np.array([len(h) >= self.params.min_pts for h in hoods])
        self.core_sample_indices = np.where(is_core)[0]

        visited = np.zeros(n, dtype=bool)
        cluster_id = 0
        for i in range(n):
            if visited[i] or not is_core[i]:
                continue
            visited[i] = True
            labels[i] = cluster_id
            queue = deque([i])
            while queue:
                current = queue.popleft()
                for nb in hoods[current]:
                    if labels[nb] == NOISE:
                        labels[nb] = cluster_id
                    if visited[nb] or not is_core[nb]:
                        continue
                    visited[nb] = True
                    queue.append(nb)
            cluster_id += 1

        self.labels = labels
        self.n_clusters = cluster_id
        log.debug(f"DBSCAN: {n} points, {len(self.core_sample_indices)} core, {cluster_id} clusters")
        return self


def dbscan(points, params: ClusteringParams, metric: Metric = euclidean) -> List[Optional[int]]:
    """Cluster id per point, None for noise."""
    X = np.asarray(points)
    if X.size == 0:
        return []
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    labels = DBSCAN(params, metric).fit(X).labels
    return [None if lbl == NOISE else int(lbl) for lbl in labels]
