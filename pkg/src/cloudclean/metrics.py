"""Evaluation metrics: Chamfer measure, RMSD, and F-beta classification scores.

The Chamfer measure is the two-sided mean of squared nearest-neighbor
distances; the first term measures proximity of cleaned points to the target,
the second rewards even coverage of the target and penalizes gaps. The RMSD
keeps only the one-sided distance-to-target term, for reference clouds whose
sampling is not uniform. Callers compare different shapes by scale-normalizing
both clouds to a unit bounding-box diagonal first (see ``normalized_pair``);
the metrics themselves are computed on the coordinates as given.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Optional

import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, bbox_diagonal

__all__ = ["chamfer_measure", "rmsd", "distances_to_reference", "f_beta",
           "FBetaResult", "MetricReport", "normalized_pair", "distance_colors"]


def _points(cloud) -> np.ndarray:
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] == 0:
        raise ValueError(f"expected a non-empty (N, 3) cloud, got shape {pts.shape}")
    return pts


def distances_to_reference(cloud, reference) -> np.ndarray:
    """Euclidean distance from each cloud point to its nearest reference point."""
    pts = _points(cloud)
    ref = _points(reference)
    dist, _ = cKDTree(ref).query(pts)
    return dist


def chamfer_measure(cleaned, reference) -> float:
    """Two-sided mean squared nearest-neighbor distance between the clouds."""
    d_forward = distances_to_reference(cleaned, reference)
    d_backward = distances_to_reference(reference, cleaned)
    return float(np.mean(d_forward ** 2) + np.mean(d_backward ** 2))


def rmsd(cleaned, reference) -> float:
    """Root mean square distance from each cleaned point to the reference."""
    d = distances_to_reference(cleaned, reference)
    return float(np.sqrt(np.mean(d ** 2)))


def normalized_pair(cleaned: PointCloud, reference: PointCloud) -> tuple[np.ndarray, np.ndarray]:
    """Both clouds scaled by the reference bbox diagonal (unit-diagonal frame).

    One shared scale keeps the two clouds comparable even when cleaning has
    shrunk or inflated the input.
    """
    diag = bbox_diagonal(reference)
    if diag <= 0:
        raise ValueError("reference cloud is degenerate (bbox diagonal 0)")
    return cleaned.points / diag, reference.points / diag


class FBetaResult(NamedTuple):
    score: float
    precision: float
    recall: float


def f_beta(predicted_labels, true_labels, beta: float = 1.0) -> FBetaResult:
    """F-beta score of outlier classification (positive class = outlier).

    beta > 1 weights recall over precision; any zero denominator yields 0.
    """
    pred = np.asarray(predicted_labels).astype(bool)
    true = np.asarray(true_labels).astype(bool)
    if pred.shape != true.shape:
        raise ValueError(f"label sequences differ in length: {pred.shape} vs {true.shape}")
    tp = float(np.sum(pred & true))
    fp = float(np.sum(pred & ~true))
    fn = float(np.sum(~pred & true))
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    denom = beta * beta * precision + recall
    score = (1 + beta * beta) * precision * recall / denom if denom > 0 else 0.0
    return FBetaResult(score, precision, recall)


@dataclass
class MetricReport:
    """Bundle of evaluation results for one (cleaned, reference) pair.

    F-score fields stay None when no labels were available. ``info`` carries
    free-form context (input paths, noise level) for downstream report plots.
    """

    chamfer: float
    rmsd: float
    precision: Optional[float] = None
    recall: Optional[float] = None
    f1: Optional[float] = None
    f2: Optional[float] = None
    per_point_distances: Optional[list] = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for name in ("chamfer", "rmsd"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        for name in ("precision", "recall", "f1", "f2"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")

    def to_json(self, path=None) -> str:
        doc = {
            "schema_version": 1,
            "chamfer": self.chamfer,
            "rmsd": self.rmsd,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "f2": self.f2,
            "per_point_distances": self.per_point_distances,
            "info": self.info,
        }
        text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, source) -> "MetricReport":
        text = Path(source).read_text() if isinstance(source, (str, Path)) and \
            str(source).endswith(".json") else source
        doc = json.loads(text)
        return cls(chamfer=doc["chamfer"], rmsd=doc["rmsd"],
                   precision=doc.get("precision"), recall=doc.get("recall"),
                   f1=doc.get("f1"), f2=doc.get("f2"),
                   per_point_distances=doc.get("per_point_distances"),
                   info=doc.get("info", {}))


def distance_colors(distances, max_distance: Optional[float] = None) -> np.ndarray:
    """Linear blue-to-red ramp over [0, max_distance] as (N, 3) uint8."""
    d = np.asarray(distances, dtype=np.float64)
    if max_distance is None:
        max_distance = float(d.max()) or 1.0
    t = np.clip(d / max_distance, 0.0, 1.0)
    colors = np.zeros((len(d), 3), dtype=np.uint8)
    colors[:, 0] = np.round(255 * t)
    colors[:, 2] = np.round(255 * (1.0 - t))
    return colors
