"""Point cloud container and spatial queries.

A :class:`PointCloud` is an immutable (N, 3) array of sample positions with
optional per-point outlier labels. :class:`SpatialIndex` wraps a kd-tree and
provides the two neighborhood queries everything else is built on: closed-ball
radius search and k-nearest-neighbors with deterministic tie-breaking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

__all__ = ["PointCloud", "SpatialIndex", "bbox_diagonal"]


def _as_points(points) -> np.ndarray:
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"points must have shape (N, 3), got {pts.shape}")
    return pts


@dataclass(frozen=True)
class PointCloud:
    """Ordered set of 3D samples, optionally labeled inlier (0) / outlier (1).

    Arrays are copied on construction and marked read-only; all operations in
    this package treat clouds as immutable values.
    """

    points: np.ndarray
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        pts = _as_points(self.points).copy()
        if pts.shape[0] < 1:
            raise ValueError("a point cloud needs at least one point")
        if not np.isfinite(pts).all():
            raise ValueError("point coordinates must be finite")
        pts.flags.writeable = False
        object.__setattr__(self, "points", pts)
        if self.labels is not None:
            lab = np.asarray(self.labels, dtype=np.uint8).copy()
            if lab.ndim != 1 or lab.shape[0] != pts.shape[0]:
                raise ValueError(
                    f"labels length {lab.shape} does not match {pts.shape[0]} points"
                )
            if not np.isin(lab, (0, 1)).all():
                raise ValueError("labels must be 0 (inlier) or 1 (outlier)")
            lab.flags.writeable = False
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.points.shape[0]

    def with_points(self, points) -> "PointCloud":
        """New cloud with replaced coordinates, keeping labels if sizes agree."""
        pts = _as_points(points)
        labels = self.labels if self.labels is not None and len(pts) == len(self) else None
        return PointCloud(pts, labels)


def bbox_diagonal(cloud: PointCloud) -> float:
    """Length of the axis-aligned bounding-box diagonal of the cloud.

    This is the unit that all radius/noise fractions in the package refer to.
    A degenerate cloud (all points identical) has diagonal 0; operations that
    scale by the diagonal reject that case themselves.
    """
    pts = cloud.points
    extent = pts.max(axis=0) - pts.min(axis=0)
    return float(np.linalg.norm(extent))


class SpatialIndex:
    """Immutable kd-tree over one point cloud.

    Safe for concurrent reads; queries return exactly the same index sets as a
    brute-force scan, in deterministic order.
    """

    def __init__(self, cloud: PointCloud):
        self.cloud = cloud
        self._tree = cKDTree(cloud.points)

    def __len__(self) -> int:
        return len(self.cloud)

    def radius_neighbors(self, center, r: float) -> np.ndarray:
        """Indices of all points with distance <= r from center, ascending."""
        if r <= 0:
            raise ValueError(f"radius must be positive, got {r}")
        idx = self._tree.query_ball_point(np.asarray(center, dtype=np.float64), r)
        return np.sort(np.asarray(idx, dtype=np.int64))

    def knn(self, point, k: int) -> np.ndarray:
        """Indices of the k nearest points, by (distance, index) ascending.

        Ties at the k-th distance are resolved toward the lower index, which
        keeps results independent of tree layout.
        """
        n = len(self.cloud)
        if not 1 <= k <= n:
            raise ValueError(f"k must be in [1, {n}], got {k}")
        point = np.asarray(point, dtype=np.float64)
        dist, idx = self._tree.query(point, k=k)
        dist = np.atleast_1d(dist)
        idx = np.atleast_1d(idx)
        # Re-rank every candidate within the k-th distance so equal distances
        # cannot come back in tree order.
        ball = np.asarray(
            self._tree.query_ball_point(point, float(dist[-1])), dtype=np.int64
        )
        if ball.size < k:  # guard against ball/query rounding disagreement
            ball = idx.astype(np.int64)
        d2 = np.einsum("ij,ij->i", self.cloud.points[ball] - point, self.cloud.points[ball] - point)
        order = np.lexsort((ball, d2))
        return ball[order[:k]]

    def knn_bulk(self, points, k: int) -> tuple[np.ndarray, np.ndarray]:
        """Vectorized k-nearest query for many points at once.

        Returns (distances, indices) of shape (len(points), k). Tie order at
        equal distances follows the tree; use :meth:`knn` where the per-index
        tie-break matters.
        """
        n = len(self.cloud)
        if not 1 <= k <= n:
            raise ValueError(f"k must be in [1, {n}], got {k}")
        dist, idx = self._tree.query(np.asarray(points, dtype=np.float64), k=k)
        dist = np.atleast_2d(dist)
        idx = np.atleast_2d(idx)
        return dist, idx

    def radius_neighbors_bulk(self, points, r: float) -> list[np.ndarray]:
        """Closed-ball neighborhoods for many centers, each sorted ascending."""
        if r <= 0:
            raise ValueError(f"radius must be positive, got {r}")
        hits = self._tree.query_ball_point(np.asarray(points, dtype=np.float64), r)
        return [np.sort(np.asarray(h, dtype=np.int64)) for h in hits]
