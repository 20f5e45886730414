"""Two-stage cleaning: outlier removal, then iterative inflated denoising.

``clean`` first drops points the outlier head classifies above threshold,
then repeats for a configured number of iterations: predict a displacement
field for every surviving point, subtract the field's local k-NN mean (the
inflation step, which removes the low-frequency component that otherwise
shrinks the cloud), and move the points. The patch radius is computed once
from the input cloud and frozen across iterations so patch scale stays stable
as the cloud contracts; the spatial index is rebuilt after every move so
neighborhoods track the moved points.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .cloud import PointCloud, SpatialIndex, bbox_diagonal
from .errors import EmptyCloudError, StructuralError
from .metrics import chamfer_measure, normalized_pair
from .model import PatchNet, forward_batch
from .patches import extract_patches

__all__ = ["CleaningConfig", "DisplacementField", "CleaningTrace",
           "remove_outliers", "denoise_once", "inflate", "clean"]


@dataclass(frozen=True)
class CleaningConfig:
    radius_fraction: float = 0.05
    iterations: int = 2
    inflation_k: int = 100
    use_inflation: bool = True
    outlier_threshold: float = 0.5
    patch_seed: int = 0
    batch_size: int = 512

    def __post_init__(self):
        if self.radius_fraction <= 0:
            raise ValueError("radius_fraction must be > 0")
        if self.iterations < 0:
            raise ValueError("iterations must be >= 0")
        if self.inflation_k < 1:
            raise ValueError("inflation_k must be >= 1")


@dataclass(frozen=True)
class DisplacementField:
    """Per-point correction vectors aligned to one cloud."""

    vectors: np.ndarray  # (N, 3) model units

    def __post_init__(self):
        v = np.asarray(self.vectors, dtype=np.float64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vectors must have shape (N, 3), got {v.shape}")
        if not np.isfinite(v).all():
            raise ValueError("displacement vectors must be finite")
        object.__setattr__(self, "vectors", v)

    def __len__(self) -> int:
        return self.vectors.shape[0]


@dataclass
class CleaningTrace:
    """What the pipeline did, serializable for the report tool."""

    input_count: int
    outlier_stage_ran: bool
    outliers_removed: int
    patch_radius: float
    iterations: list = field(default_factory=list)  # per-iteration stat dicts

    def to_json(self, path=None) -> str:
        doc = {"schema_version": 1, "input_count": self.input_count,
               "outlier_stage_ran": self.outlier_stage_ran,
               "outliers_removed": self.outliers_removed,
               "patch_radius": self.patch_radius,
               "iterations": self.iterations}
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text


def _patch_radius(cloud: PointCloud, config: CleaningConfig) -> float:
    diag = bbox_diagonal(cloud)
    if diag <= 0:
        raise ValueError("cannot clean a degenerate cloud (bbox diagonal 0)")
    return config.radius_fraction * diag


def _head_outputs(cloud: PointCloud, net: PatchNet, r: float,
                  config: CleaningConfig) -> np.ndarray:
    index = SpatialIndex(cloud)
    outputs = []
    for start in range(0, len(cloud), config.batch_size):
        idx = np.arange(start, min(start + config.batch_size, len(cloud)))
        patches = extract_patches(cloud, index, idx, r, net.config.m, config.patch_seed)
        outputs.append(forward_batch(patches, net, batch_size=config.batch_size))
    return np.concatenate(outputs, axis=0)


def remove_outliers(cloud: PointCloud, net: PatchNet,
                    config: CleaningConfig = CleaningConfig()) -> tuple[PointCloud, np.ndarray]:
    """Drop every point whose predicted outlier probability exceeds threshold.

    Returns the surviving cloud and the full per-point 0/1 label vector.
    Refuses to emit an empty cloud.
    """
    if net.config.output_dim != 1:
        raise StructuralError("outlier removal needs an output_dim=1 head")
    r = _patch_radius(cloud, config)
    logits = _head_outputs(cloud, net, r, config)[:, 0]
    probs = 1.0 / (1.0 + np.exp(-logits))
    labels = (probs > config.outlier_threshold).astype(np.uint8)
    keep = labels == 0
    if not keep.any():
        raise EmptyCloudError("every point was classified as an outlier")
    return PointCloud(cloud.points[keep]), labels


def denoise_once(cloud: PointCloud, net: PatchNet,
                 config: CleaningConfig = CleaningConfig(),
                 patch_radius: Optional[float] = None) -> DisplacementField:
    """Predict the correction field for every point; nothing is moved yet."""
    if net.config.output_dim != 3:
        raise StructuralError("denoising needs an output_dim=3 head")
    r = patch_radius if patch_radius is not None else _patch_radius(cloud, config)
    normalized = _head_outputs(cloud, net, r, config)
    return DisplacementField(normalized * r)


def inflate(field: DisplacementField, cloud: PointCloud, k: int) -> DisplacementField:
    """Subtract each point's k-NN mean displacement from its own displacement.

    Neighborhoods exclude the point itself and live in the current cloud
    positions. Computed as the mean of (d_i - d_j) differences, so a constant
    field cancels exactly. ``k`` larger than the available neighbor count is
    clamped with a warning.
    """
    if len(field) != len(cloud):
        raise StructuralError(
            f"field covers {len(field)} points but the cloud has {len(cloud)}")
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(cloud)
    if n == 1:
        warnings.warn("inflation skipped: single-point cloud has no neighbors")
        return DisplacementField(field.vectors.copy())
    if k > n - 1:
        warnings.warn(f"inflation k={k} clamped to {n - 1} available neighbors")
        k = n - 1
    index = SpatialIndex(cloud)
    _, idx = index.knn_bulk(cloud.points, k + 1)
    # drop each point's own row from its neighbor list
    rows = np.arange(n)[:, None]
    self_hits = idx == rows
    has_self = self_hits.any(axis=1)
    # where the query point was not among the k+1 hits (duplicate-point ties),
    # drop the farthest hit instead
    drop = np.where(has_self, self_hits.argmax(axis=1), k)
    keep_mask = np.ones_like(idx, dtype=bool)
    keep_mask[np.arange(n), drop] = False
    neighbors = idx[keep_mask].reshape(n, k)
    diffs = field.vectors[:, None, :] - field.vectors[neighbors]
    return DisplacementField(diffs.mean(axis=1))


def clean(cloud: PointCloud, outlier_net: Optional[PatchNet],
          denoise_net: Optional[PatchNet],
          config: CleaningConfig = CleaningConfig(),
          skip_outliers: bool = False,
          reference: Optional[PointCloud] = None,
          iteration_hook=None) -> tuple[PointCloud, CleaningTrace]:
    """Run the full two-stage pipeline.

    ``reference``, when given, adds a Chamfer measure per iteration to the
    trace (evaluation aid; it does not influence the cleaning).
    ``iteration_hook(iteration, cloud)`` is called after each position update,
    e.g. to save intermediates.
    """
    r = _patch_radius(cloud, config)
    trace = CleaningTrace(input_count=len(cloud),
                          outlier_stage_ran=not skip_outliers and outlier_net is not None,
                          outliers_removed=0, patch_radius=r)
    current = cloud
    if trace.outlier_stage_ran:
        current, labels = remove_outliers(cloud, outlier_net, config)
        trace.outliers_removed = int(labels.sum())
    if config.iterations > 0 and denoise_net is None:
        raise StructuralError("denoising iterations requested without a displacement model")
    for it in range(config.iterations):
        field = denoise_once(current, denoise_net, config, patch_radius=r)
        if config.use_inflation:
            field = inflate(field, current, config.inflation_k)
        current = current.with_points(current.points + field.vectors)
        stats = {
            "iteration": it + 1,
            "mean_displacement": float(np.linalg.norm(field.vectors, axis=1).mean()),
            "max_displacement": float(np.linalg.norm(field.vectors, axis=1).max()),
            "bbox_diagonal": bbox_diagonal(current),
        }
        if reference is not None:
            # same unit-diagonal convention as the evaluate command
            stats["chamfer"] = chamfer_measure(*normalized_pair(current, reference))
        trace.iterations.append(stats)
        if iteration_hook is not None:
            iteration_hook(it + 1, current)
    return current, trace
