"""cloudclean: learned outlier removal and denoising for dense 3D point clouds.

The package trains and applies two locally-operating network heads: an
outlier classifier that discards samples with no underlying surface, and a
displacement regressor that moves the remaining points back toward the
surface, applied iteratively with an anti-shrinkage inflation step. It also
ships everything needed to build the models from scratch: synthetic
corruption of mesh-sampled clouds, training loops with gradient
verification, and Chamfer/RMSD/F-score evaluation.
"""

__version__ = "0.1.0"

from .cloud import PointCloud, SpatialIndex, bbox_diagonal
from .patches import Patch, extract_patch, extract_patches
from .pcio import load_cloud, save_cloud
from .mesh import Mesh, load_obj, save_obj, sample_mesh
from .corruption import NoiseSpec, OutlierSpec, add_noise, inject_outliers
from .dataset import (DatasetConfig, DatasetManifest, ManifestEntry,
                      generate_dataset, load_manifest, save_manifest)
from .model import (ModelConfig, PatchNet, forward, forward_batch,
                    predict_displacement, predict_outlier_probability,
                    quaternion_to_rotation)
from .checkpoint import load_checkpoint, save_checkpoint
from .losses import (LossConfig, combined_patch_loss, farthest_point_loss,
                     fixed_target_loss, matched_point_loss, nearest_point_loss,
                     outlier_label_loss, precompute_fixed_targets)
from .metrics import (MetricReport, chamfer_measure, distance_colors,
                      distances_to_reference, f_beta, normalized_pair, rmsd)
from .training import TrainConfig, TrainRun, gradient_check, init_params, train
from .pipeline import (CleaningConfig, CleaningTrace, DisplacementField, clean,
                       denoise_once, inflate, remove_outliers)

__all__ = [
    "PointCloud", "SpatialIndex", "bbox_diagonal",
    "Patch", "extract_patch", "extract_patches",
    "load_cloud", "save_cloud",
    "Mesh", "load_obj", "save_obj", "sample_mesh",
    "NoiseSpec", "OutlierSpec", "add_noise", "inject_outliers",
    "DatasetConfig", "DatasetManifest", "ManifestEntry",
    "generate_dataset", "load_manifest", "save_manifest",
    "ModelConfig", "PatchNet", "forward", "forward_batch",
    "predict_displacement", "predict_outlier_probability", "quaternion_to_rotation",
    "load_checkpoint", "save_checkpoint",
    "LossConfig", "combined_patch_loss", "farthest_point_loss", "fixed_target_loss",
    "matched_point_loss", "nearest_point_loss", "outlier_label_loss",
    "precompute_fixed_targets",
    "MetricReport", "chamfer_measure", "distance_colors", "distances_to_reference",
    "f_beta", "normalized_pair", "rmsd",
    "TrainConfig", "TrainRun", "gradient_check", "init_params", "train",
    "CleaningConfig", "CleaningTrace", "DisplacementField", "clean",
    "denoise_once", "inflate", "remove_outliers",
]
