"""Synthetic corruption: additive noise models and outlier injection.

Both operations are pure functions of (cloud, spec): the input cloud is never
mutated and results are deterministic given the spec's seed. All magnitudes
are expressed as fractions of a bounding-box diagonal so they transfer across
shapes of different size.
"""

from __future__ import annotations

from dataclasses import dataclass
import numpy as np
from scipy.spatial import cKDTree

from .cloud import PointCloud, bbox_diagonal

__all__ = ["NoiseSpec", "OutlierSpec", "add_noise", "inject_outliers",
           "OUTLIER_RETRY_CAP"]

OUTLIER_RETRY_CAP = 50


@dataclass(frozen=True)
class NoiseSpec:
    """Additive noise description.

    ``gaussian-isotropic`` adds i.i.d. zero-mean Gaussian noise per coordinate
    with sigma = sigma_fraction * bbox diagonal. ``gaussian-directional``
    draws from an anisotropic Gaussian whose principal axes form a frame
    aligned with ``direction``: the first anisotropy component scales the
    direction axis itself, the other two scale the perpendicular axes.
    """

    kind: str = "gaussian-isotropic"
    sigma_fraction: float = 0.01
    direction: tuple = (0.0, 0.0, 1.0)
    anisotropy: tuple = (0.3, 0.3, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian-isotropic", "gaussian-directional"):
            raise ValueError(f"unknown noise kind {self.kind!r}")
        if self.sigma_fraction < 0:
            raise ValueError("sigma_fraction must be >= 0")
        if self.kind == "gaussian-directional":
            d = np.asarray(self.direction, dtype=np.float64)
            if not np.isclose(np.linalg.norm(d), 1.0, atol=1e-6):
                raise ValueError("direction must be unit-norm")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "sigma_fraction": self.sigma_fraction,
                "direction": list(self.direction), "anisotropy": list(self.anisotropy),
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseSpec":
        return cls(kind=d["kind"], sigma_fraction=d["sigma_fraction"],
                   direction=tuple(d.get("direction", (0, 0, 1))),
                   anisotropy=tuple(d.get("anisotropy", (0.3, 0.3, 1.0))),
                   seed=d["seed"])


@dataclass(frozen=True)
class OutlierSpec:
    """Outlier injection description.

    ``gaussian`` displaces a random subset of points by Gaussian offsets with
    sigma = sigma_fraction * reference bbox diagonal, keeping only candidates
    farther from the reference surface than rejection_threshold_fraction *
    diagonal (failed candidates are redrawn up to a retry cap, then left
    clean). ``uniform-bbox`` replaces the subset with uniform samples inside
    the reference bounding box scaled up by ``bbox_scale``.
    """

    kind: str = "gaussian"
    fraction: float = 0.3
    sigma_fraction: float = 0.20
    bbox_scale: float = 1.10
    rejection_threshold_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.kind not in ("gaussian", "uniform-bbox"):
            raise ValueError(f"unknown outlier kind {self.kind!r}")
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError("fraction must lie in [0, 1]")
        if self.kind == "gaussian" and self.sigma_fraction <= 0:
            raise ValueError("sigma_fraction must be > 0 for gaussian outliers")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "fraction": self.fraction,
                "sigma_fraction": self.sigma_fraction, "bbox_scale": self.bbox_scale,
                "rejection_threshold_fraction": self.rejection_threshold_fraction,
                "seed": self.seed}

    @classmethod
    def from_dict(cls, d: dict) -> "OutlierSpec":
        return cls(kind=d["kind"], fraction=d["fraction"],
                   sigma_fraction=d.get("sigma_fraction", 0.20),
                   bbox_scale=d.get("bbox_scale", 1.10),
                   rejection_threshold_fraction=d.get("rejection_threshold_fraction", 0.0),
                   seed=d["seed"])


def _direction_frame(direction) -> np.ndarray:
    """Orthonormal frame whose FIRST axis is the given unit direction."""
    d = np.asarray(direction, dtype=np.float64)
    d = d / np.linalg.norm(d)
    helper = np.zeros(3)
    helper[np.argmin(np.abs(d))] = 1.0
    u = np.cross(d, helper)
    u /= np.linalg.norm(u)
    v = np.cross(d, u)
    return np.stack([d, u, v], axis=1)  # columns are the frame axes


def add_noise(cloud: PointCloud, spec: NoiseSpec) -> PointCloud:
    """Return a new cloud with additive noise applied; the input is untouched."""
    diag = bbox_diagonal(cloud)
    if diag <= 0:
        raise ValueError("cannot scale noise on a degenerate cloud (bbox diagonal 0)")
    if spec.sigma_fraction == 0:
        return PointCloud(cloud.points, cloud.labels)
    rng = np.random.default_rng(spec.seed)
    sigma = spec.sigma_fraction * diag
    n = len(cloud)
    if spec.kind == "gaussian-isotropic":
        disp = rng.normal(0.0, sigma, size=(n, 3))
    else:
        frame = _direction_frame(spec.direction)
        scales = sigma * np.asarray(spec.anisotropy, dtype=np.float64)
        local = rng.standard_normal((n, 3)) * scales
        disp = local @ frame.T
    return PointCloud(cloud.points + disp, cloud.labels)


def inject_outliers(cloud: PointCloud, spec: OutlierSpec,
                    surface_reference: PointCloud) -> PointCloud:
    """Convert a random subset of points into labeled outliers.

    ``surface_reference`` is the clean cloud standing in for the surface; it
    sets the bbox diagonal that sigma/threshold fractions refer to and is the
    target of the nearest-surface rejection test. Points whose candidates
    fail the test ``OUTLIER_RETRY_CAP`` times stay clean, so the realized
    outlier count can fall short of floor(fraction * N).
    """
    n = len(cloud)
    n_out = int(np.floor(spec.fraction * n))
    labels = np.zeros(n, dtype=np.uint8)
    if n_out == 0:
        return PointCloud(cloud.points, labels)
    diag = bbox_diagonal(surface_reference)
    if diag <= 0:
        raise ValueError("degenerate surface reference (bbox diagonal 0)")
    rng = np.random.default_rng(spec.seed)
    chosen = rng.choice(n, size=n_out, replace=False)
    pts = cloud.points.copy()
    if spec.kind == "uniform-bbox":
        lo = surface_reference.points.min(axis=0)
        hi = surface_reference.points.max(axis=0)
        center = (lo + hi) / 2
        half = (hi - lo) / 2 * spec.bbox_scale
        pts[chosen] = center + rng.uniform(-1.0, 1.0, size=(n_out, 3)) * half
        labels[chosen] = 1
        return PointCloud(pts, labels)
    # gaussian kind with nearest-surface rejection
    sigma = spec.sigma_fraction * diag
    threshold = spec.rejection_threshold_fraction * diag
    tree = cKDTree(surface_reference.points)
    pending = chosen.copy()
    for _ in range(OUTLIER_RETRY_CAP):
        if pending.size == 0:
            break
        candidates = cloud.points[pending] + rng.normal(0.0, sigma, size=(pending.size, 3))
        dist, _ = tree.query(candidates)
        ok = dist > threshold
        accepted = pending[ok]
        pts[accepted] = candidates[ok]
        labels[accepted] = 1
        pending = pending[~ok]
    return PointCloud(pts, labels)
