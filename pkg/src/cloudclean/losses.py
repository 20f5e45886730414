"""Training losses for both heads.

All losses are differentiable torch functions; batch reduction is the
arithmetic mean. Squared distances are used throughout so no square roots
appear in gradients. Where a min or max over a ground-truth patch ties, the
lowest index wins, which keeps gradients deterministic.

The displacement-head losses come in three flavors:

* ``nearest_point_loss`` — squared distance to the nearest ground-truth patch
  point (surface proximity);
* ``farthest_point_loss`` — squared distance to the farthest ground-truth
  patch point (keeps the point centered in its patch, i.e. regularly
  distributed);
* ``combined_patch_loss`` — alpha-weighted sum of the two (default alpha
  0.99, the regularity term acting as a regularizer);
* ``fixed_target_loss`` / ``matched_point_loss`` — squared distance to a
  fixed target point: the precomputed nearest clean neighbor of the noisy
  point, or the directly corresponding clean point.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch
from scipy.spatial import cKDTree

__all__ = ["LossConfig", "outlier_label_loss", "matched_point_loss",
           "nearest_point_loss", "farthest_point_loss", "combined_patch_loss",
           "fixed_target_loss", "precompute_fixed_targets"]


@dataclass(frozen=True)
class LossConfig:
    """Weighting and ground-truth patch geometry for the displacement losses.

    ``gt_patch_radius`` (model units) bounds the ground-truth neighborhood
    that nearest/farthest searches run over; None means "use the cleaning
    patch radius", which the trainer fills in.
    """

    alpha: float = 0.99
    gt_patch_radius: Optional[float] = None

    def __post_init__(self):
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")


def _as_tensor(x) -> torch.Tensor:
    return x if isinstance(x, torch.Tensor) else torch.as_tensor(np.asarray(x, dtype=np.float64))


def _reduce(values: torch.Tensor, reduction: str) -> torch.Tensor:
    if reduction == "mean":
        return values.mean()
    if reduction == "none":
        return values
    raise ValueError(f"unknown reduction {reduction!r}")


def outlier_label_loss(predicted, label, reduction: str = "mean") -> torch.Tensor:
    """L1 distance between predicted outlier probabilities and 0/1 labels."""
    predicted = _as_tensor(predicted)
    label = _as_tensor(label).to(predicted.dtype)
    return _reduce((predicted - label).abs(), reduction)


def matched_point_loss(cleaned, target, reduction: str = "mean") -> torch.Tensor:
    """Squared distance to the corresponding ground-truth point.

    Needs a known point-wise correspondence, so it only applies to training
    fixtures where the noisy cloud was built by perturbing the clean one.
    """
    cleaned = _as_tensor(cleaned)
    target = _as_tensor(target).to(cleaned.dtype)
    return _reduce(((cleaned - target) ** 2).sum(dim=-1), reduction)


def fixed_target_loss(cleaned, target, reduction: str = "mean") -> torch.Tensor:
    """Squared distance to a precomputed fixed target (the nearest clean
    neighbor of the noisy point before any denoising)."""
    return matched_point_loss(cleaned, target, reduction)


def _patch_distances(cleaned: torch.Tensor, gt_patch: torch.Tensor,
                     mask: Optional[torch.Tensor]) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
    cleaned = _as_tensor(cleaned)
    gt_patch = _as_tensor(gt_patch).to(cleaned.dtype)
    single = cleaned.dim() == 1
    if single:
        cleaned = cleaned.unsqueeze(0)
        gt_patch = gt_patch.unsqueeze(0)
        if mask is not None:
            mask = _as_tensor(mask).unsqueeze(0)
    if mask is not None:
        mask = mask if isinstance(mask, torch.Tensor) else torch.as_tensor(mask)
        mask = mask.bool()
        if not mask.any(dim=1).all():
            raise ValueError("ground-truth patch is empty for some batch row; "
                             "drop empty patches before computing the loss")
    elif gt_patch.shape[1] == 0:
        raise ValueError("ground-truth patch must be non-empty")
    d2 = ((cleaned.unsqueeze(1) - gt_patch) ** 2).sum(dim=-1)
    return (d2.squeeze(0) if single else d2), mask


def _extremum(cleaned, gt_patch, mask, largest: bool, reduction: str) -> torch.Tensor:
    d2, mask = _patch_distances(cleaned, gt_patch, mask)
    single = d2.dim() == 1
    if single:
        d2 = d2.unsqueeze(0)
    if mask is not None:
        fill = -np.inf if largest else np.inf
        d2 = d2.masked_fill(~mask, fill)
    # gather through argmin/argmax so ties resolve to the lowest index
    idx = d2.argmax(dim=1) if largest else d2.argmin(dim=1)
    values = d2.gather(1, idx.unsqueeze(1)).squeeze(1)
    if single:
        values = values.squeeze(0)
    return _reduce(values, reduction)


def nearest_point_loss(cleaned, gt_patch, mask=None, reduction: str = "mean") -> torch.Tensor:
    """Minimum squared distance from the cleaned point to its ground-truth patch."""
    return _extremum(cleaned, gt_patch, mask, largest=False, reduction=reduction)


def farthest_point_loss(cleaned, gt_patch, mask=None, reduction: str = "mean") -> torch.Tensor:
    """Maximum squared distance from the cleaned point to its ground-truth patch."""
    return _extremum(cleaned, gt_patch, mask, largest=True, reduction=reduction)


def combined_patch_loss(cleaned, gt_patch, mask=None, alpha: float = 0.99,
                        reduction: str = "mean") -> torch.Tensor:
    """alpha * nearest + (1 - alpha) * farthest squared patch distance."""
    near = nearest_point_loss(cleaned, gt_patch, mask, reduction=reduction)
    far = farthest_point_loss(cleaned, gt_patch, mask, reduction=reduction)
    return alpha * near + (1.0 - alpha) * far


def precompute_fixed_targets(noisy_points: np.ndarray, clean_points: np.ndarray) -> np.ndarray:
    """Nearest clean point for every noisy point, ties to the lowest index.

    Computed once from the noisy positions before any denoising; the result
    stays fixed for the whole training run.
    """
    noisy_points = np.asarray(noisy_points, dtype=np.float64)
    clean_points = np.asarray(clean_points, dtype=np.float64)
    tree = cKDTree(clean_points)
    if len(clean_points) == 1:
        return np.repeat(clean_points, len(noisy_points), axis=0)
    dist, idx = tree.query(noisy_points, k=2)
    best = idx[:, 0].copy()
    for row in np.nonzero(dist[:, 0] == dist[:, 1])[0]:
        ball = tree.query_ball_point(noisy_points[row], dist[row, 0])
        diffs = clean_points[ball] - noisy_points[row]
        d2 = np.einsum("ij,ij->i", diffs, diffs)
        tied = np.asarray(ball)[d2 == d2.min()]
        best[row] = tied.min()
    return clean_points[best]
