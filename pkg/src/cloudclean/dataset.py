"""Paired (corrupted, clean) dataset generation and the manifest that records it.

A dataset is a directory of cloud files plus ``manifest.json`` pairing each
corrupted cloud with its clean ground truth and the exact generation
parameters (including derived seeds), so regeneration with the same master
seed reproduces byte-identical files.

Two tasks are supported:

* ``denoise`` — per shape, one clean cloud and one noisy cloud per additive
  noise fraction (the zero fraction included, so the noisy file equals the
  clean file).
* ``outliers`` — per shape, larger clean clouds crossed with a grid of
  outlier fractions and additive noise fractions, with per-point labels.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np

from .corruption import NoiseSpec, OutlierSpec, add_noise, inject_outliers
from .errors import ConfigError, StructuralError
from .mesh import Mesh, sample_mesh
from .pcio import load_cloud, save_cloud
from .cloud import PointCloud

__all__ = ["DatasetConfig", "ManifestEntry", "DatasetManifest", "generate_dataset",
           "load_manifest", "save_manifest", "SCHEMA_VERSION"]

SCHEMA_VERSION = 1

DENOISE_NOISE_FRACTIONS = (0.0, 0.0025, 0.005, 0.01, 0.015, 0.025)
OUTLIER_FRACTIONS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9)
OUTLIER_NOISE_FRACTIONS = (0.0, 0.0025, 0.005, 0.01)


def derive_seed(master_seed: int, *keys: int) -> int:
    """Stable per-task seed derived from the master seed and integer keys."""
    ss = np.random.SeedSequence(entropy=master_seed, spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] & np.uint64(0x7FFFFFFFFFFFFFFF))


@dataclass
class DatasetConfig:
    task: str = "denoise"            # denoise | outliers
    split: str = "train"             # train | test
    master_seed: int = 0
    format: str = "xyz"
    points_per_cloud: Optional[int] = None   # None → 100k denoise / 140k outliers
    noise_fractions: tuple = DENOISE_NOISE_FRACTIONS
    outlier_fractions: tuple = OUTLIER_FRACTIONS
    outlier_noise_fractions: tuple = OUTLIER_NOISE_FRACTIONS
    outlier_kind: str = "gaussian"
    outlier_sigma_fraction: float = 0.20
    outlier_bbox_scale: float = 1.10
    # None → per cloud, the additive-noise fraction of that cloud
    rejection_threshold_fraction: Optional[float] = None

    def __post_init__(self):
        if self.task not in ("denoise", "outliers"):
            raise ConfigError(f"unknown task {self.task!r}")
        if self.split not in ("train", "test"):
            raise ConfigError(f"unknown split {self.split!r}")

    @property
    def cloud_size(self) -> int:
        if self.points_per_cloud is not None:
            return self.points_per_cloud
        return 100_000 if self.task == "denoise" else 140_000


@dataclass
class ManifestEntry:
    shape_id: str
    clean_path: str
    noisy_path: str
    labels_path: Optional[str]
    point_count: int
    noise_spec: Optional[dict]
    outlier_spec: Optional[dict]
    warnings: list = field(default_factory=list)


@dataclass
class DatasetManifest:
    split: str
    task: str
    master_seed: int
    entries: list
    root: Path = field(default=Path("."), compare=False)

    def resolve(self, rel: str) -> Path:
        return Path(self.root) / rel

    def load_pair(self, entry: ManifestEntry) -> tuple[PointCloud, PointCloud]:
        """(corrupted, clean) clouds for one entry."""
        return load_cloud(self.resolve(entry.noisy_path)), load_cloud(self.resolve(entry.clean_path))


def save_manifest(manifest: DatasetManifest, path) -> Path:
    path = Path(path)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "split": manifest.split,
        "task": manifest.task,
        "master_seed": manifest.master_seed,
        "entries": [asdict(e) for e in manifest.entries],
    }
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def load_manifest(path, validate: bool = True) -> DatasetManifest:
    path = Path(path)
    doc = json.loads(path.read_text())
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise StructuralError(
            f"manifest schema version {doc.get('schema_version')!r} != {SCHEMA_VERSION}"
        )
    entries = [ManifestEntry(**e) for e in doc["entries"]]
    manifest = DatasetManifest(split=doc["split"], task=doc["task"],
                               master_seed=doc["master_seed"], entries=entries,
                               root=path.parent)
    if validate:
        for e in entries:
            for rel in (e.clean_path, e.noisy_path, e.labels_path):
                if rel is not None and not manifest.resolve(rel).exists():
                    raise StructuralError(f"manifest references missing file {rel}")
    return manifest


def _frac_tag(f: float) -> str:
    return format(f, "g")


def generate_dataset(shapes: list[tuple[str, Mesh]], config: DatasetConfig,
                     out_dir) -> DatasetManifest:
    """Sample, corrupt and write every configured shape variation.

    ``shapes`` is a list of (shape_id, mesh) pairs. Fully deterministic given
    ``config.master_seed``; on I/O failure all files written so far are
    removed before the error propagates.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    try:
        entries = []
        for si, (shape_id, mesh) in enumerate(shapes):
            cloud = sample_mesh(mesh, config.cloud_size, derive_seed(config.master_seed, 0, si))
            # corrupt the float32-quantized cloud (what the clean file holds),
            # so an entry regenerated from its recorded specs and the clean
            # file on disk is byte-identical to the stored corrupted file
            cloud = PointCloud(cloud.points.astype(np.float32).astype(np.float64),
                               cloud.labels)
            clean_rel = f"{shape_id}.clean.{config.format}"
            written.append(save_cloud(cloud, out_dir / clean_rel, config.format))
            if config.task == "denoise":
                entries.extend(_denoise_entries(cloud, shape_id, clean_rel, si,
                                                config, out_dir, written))
            else:
                entries.extend(_outlier_entries(cloud, shape_id, clean_rel, si,
                                                config, out_dir, written))
        manifest = DatasetManifest(split=config.split, task=config.task,
                                   master_seed=config.master_seed, entries=entries,
                                   root=out_dir)
        written.append(save_manifest(manifest, out_dir / "manifest.json"))
        return manifest
    except OSError:
        for p in written:
            p.unlink(missing_ok=True)
        raise


def _denoise_entries(cloud, shape_id, clean_rel, si, config, out_dir, written):
    entries = []
    for ni, frac in enumerate(config.noise_fractions):
        spec = NoiseSpec(kind="gaussian-isotropic", sigma_fraction=frac,
                         seed=derive_seed(config.master_seed, 1, si, ni))
        noisy = add_noise(cloud, spec)
        noisy_rel = f"{shape_id}.noise{_frac_tag(frac)}.{config.format}"
        written.append(save_cloud(noisy, out_dir / noisy_rel, config.format))
        entries.append(ManifestEntry(
            shape_id=shape_id, clean_path=clean_rel, noisy_path=noisy_rel,
            labels_path=None, point_count=len(noisy),
            noise_spec=spec.to_dict(), outlier_spec=None))
    return entries


def _outlier_entries(cloud, shape_id, clean_rel, si, config, out_dir, written):
    entries = []
    for oi, ofrac in enumerate(config.outlier_fractions):
        for ni, nfrac in enumerate(config.outlier_noise_fractions):
            nspec = NoiseSpec(kind="gaussian-isotropic", sigma_fraction=nfrac,
                              seed=derive_seed(config.master_seed, 2, si, oi, ni))
            noisy = add_noise(cloud, nspec)
            threshold = (config.rejection_threshold_fraction
                         if config.rejection_threshold_fraction is not None else nfrac)
            ospec = OutlierSpec(kind=config.outlier_kind, fraction=ofrac,
                                sigma_fraction=config.outlier_sigma_fraction,
                                bbox_scale=config.outlier_bbox_scale,
                                rejection_threshold_fraction=threshold,
                                seed=derive_seed(config.master_seed, 3, si, oi, ni))
            corrupted = inject_outliers(noisy, ospec, surface_reference=cloud)
            stem = f"{shape_id}.out{_frac_tag(ofrac)}.noise{_frac_tag(nfrac)}"
            noisy_rel = f"{stem}.{config.format}"
            written.append(save_cloud(corrupted, out_dir / noisy_rel, config.format))
            labels_rel = f"{stem}.outliers"
            warnings = []
            requested = int(np.floor(ofrac * len(cloud)))
            realized = int(corrupted.labels.sum())
            if requested and (requested - realized) / requested > 0.01:
                warnings.append(
                    f"outlier rejection retries exhausted for {requested - realized} "
                    f"of {requested} candidates")
            entries.append(ManifestEntry(
                shape_id=shape_id, clean_path=clean_rel, noisy_path=noisy_rel,
                labels_path=labels_rel, point_count=len(corrupted),
                noise_spec=nspec.to_dict(), outlier_spec=ospec.to_dict(),
                warnings=warnings))
    return entries
