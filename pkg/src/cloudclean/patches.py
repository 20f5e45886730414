"""Fixed-cardinality normalized local patches.

A patch gathers every cloud point within radius ``r`` of a query point,
re-expresses the members relative to the query point in units of ``r`` (so
all member coordinates lie in the unit ball and the query point sits at the
origin), and pads or subsamples to exactly ``m`` rows. The network consumes
nothing but these patches.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud, SpatialIndex

__all__ = ["Patch", "extract_patch", "extract_patches"]


@dataclass(frozen=True)
class Patch:
    """Normalized neighborhood of one query point.

    ``normalized_points`` has exactly ``m`` rows; rows where ``pad_mask`` is
    False are all-zero padding. ``scale`` is the extraction radius in model
    units, so ``center + scale * normalized_points`` recovers world positions.
    """

    center_index: int
    member_indices: np.ndarray   # (n_real,) int64, ascending
    normalized_points: np.ndarray  # (m, 3) float64
    pad_mask: np.ndarray         # (m,) bool, True for real rows
    scale: float

    @property
    def m(self) -> int:
        return self.normalized_points.shape[0]

    @property
    def n_real(self) -> int:
        return int(self.pad_mask.sum())


def extract_patch(cloud: PointCloud, index: SpatialIndex, i: int, r: float,
                  m: int, seed: int) -> Patch:
    """Extract the radius-r patch around point ``i``, padded/subsampled to m rows.

    When more than ``m`` points fall inside the ball, a uniformly random
    subset of size ``m`` is drawn with a generator seeded by ``(seed, i)``;
    the center point is always retained because the network predicts a
    quantity for it. Extraction is deterministic given (cloud, i, r, m, seed)
    and independent across ``i`` for a fixed base seed.
    """
    n = len(cloud)
    if not 0 <= i < n:
        raise ValueError(f"point index {i} out of range for {n}-point cloud")
    if r <= 0:
        raise ValueError(f"patch radius must be positive, got {r}")
    if m < 1:
        raise ValueError(f"patch cardinality must be >= 1, got {m}")
    members = index.radius_neighbors(cloud.points[i], r)
    members = _select_members(members, i, m, seed)
    return _build_patch(cloud.points, i, members, r, m)


def extract_patches(cloud: PointCloud, index: SpatialIndex, indices, r: float,
                    m: int, seed: int) -> list[Patch]:
    """Batch form of :func:`extract_patch` sharing one bulk radius query."""
    indices = np.asarray(indices, dtype=np.int64)
    if indices.size == 0:
        return []
    if (indices < 0).any() or (indices >= len(cloud)).any():
        raise ValueError("point index out of range")
    if r <= 0:
        raise ValueError(f"patch radius must be positive, got {r}")
    if m < 1:
        raise ValueError(f"patch cardinality must be >= 1, got {m}")
    neighborhoods = index.radius_neighbors_bulk(cloud.points[indices], r)
    patches = []
    for i, members in zip(indices, neighborhoods):
        members = _select_members(members, int(i), m, seed)
        patches.append(_build_patch(cloud.points, int(i), members, r, m))
    return patches


def _select_members(members: np.ndarray, i: int, m: int, seed: int) -> np.ndarray:
    if len(members) <= m:
        return members
    rng = np.random.default_rng([seed, i])
    others = members[members != i]
    keep = rng.choice(others, size=m - 1, replace=False)
    return np.sort(np.append(keep, i))


def _build_patch(points: np.ndarray, i: int, members: np.ndarray, r: float, m: int) -> Patch:
    rows = np.zeros((m, 3), dtype=np.float64)
    mask = np.zeros(m, dtype=bool)
    k = len(members)
    rows[:k] = (points[members] - points[i]) / r
    mask[:k] = True
    return Patch(center_index=i, member_indices=members,
                 normalized_points=rows, pad_mask=mask, scale=float(r))
