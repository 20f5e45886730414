"""Command-line surface.

Subcommands: ``generate-data``, ``train``, ``clean``, ``evaluate``,
``report``. Each reads one flat ``key = value`` config file (schemas in the
README); common flags are ``--config``, ``--input``, ``--output``, ``--seed``,
``--iterations``, ``--skip-outliers``, ``--threads``, ``--format``.

Exit codes: 0 ok, 2 config error, 3 I/O error, 4 checkpoint mismatch,
5 data mismatch, 1 other failures.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .checkpoint import load_checkpoint
from .configfile import load_config
from .dataset import (DatasetConfig, DatasetManifest, generate_dataset, load_manifest)
from .errors import (CheckpointError, CloudCleanError, ConfigError,
                     DataMismatchError, ParseError, StructuralError)
from .mesh import load_obj
from .metrics import (MetricReport, chamfer_measure, distance_colors,
                      distances_to_reference, f_beta, normalized_pair, rmsd)
from .model import ModelConfig
from .pcio import load_cloud, save_cloud
from .pipeline import CleaningConfig, clean
from .report import render_report
from .training import TrainConfig, train


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cloudclean",
        description="Learned outlier removal and denoising for dense 3D point clouds")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, inputs="single"):
        p.add_argument("--config", type=Path, help="flat key = value config file")
        if inputs == "many":
            p.add_argument("--input", type=Path, nargs="+", required=True)
        else:
            p.add_argument("--input", type=Path, required=True)
        p.add_argument("--output", type=Path, required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--threads", type=int, default=1,
                       help="worker cap; 1 guarantees determinism")
        p.add_argument("--verbose", action="store_true")

    p = sub.add_parser("generate-data", help="sample meshes and write corrupted datasets")
    common(p)
    p.set_defaults(func=cmd_generate_data)

    p = sub.add_parser("train", help="train one network head from a dataset manifest")
    common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("clean", help="remove outliers and denoise a point cloud")
    common(p)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--skip-outliers", action="store_true")
    p.add_argument("--format", choices=("xyz", "ply"), default=None)
    p.add_argument("--reference", type=Path, default=None,
                   help="optional ground truth for per-iteration trace metrics")
    p.set_defaults(func=cmd_clean)

    p = sub.add_parser("evaluate", help="compute metrics against a ground-truth cloud")
    common(p)
    p.add_argument("--reference", type=Path, required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render plots and a summary table from artifacts")
    common(p, inputs="many")
    p.set_defaults(func=cmd_report)
    return parser


def _config(args) -> dict:
    return load_config(args.config) if args.config is not None else {}


def _as_tuple(value, default):
    if value is None:
        return default
    if isinstance(value, (int, float)):
        return (value,)
    return tuple(value)


def cmd_generate_data(args) -> int:
    cfg = _config(args)
    mesh_dir = args.input
    if not mesh_dir.is_dir():
        raise ConfigError(f"mesh directory {mesh_dir} does not exist")
    mesh_paths = sorted(mesh_dir.glob("*.obj"))
    if not mesh_paths:
        raise ConfigError(f"no .obj meshes found in {mesh_dir}")
    shapes = [(p.stem, load_obj(p)) for p in mesh_paths]
    dconf = DatasetConfig(
        task=cfg.get("task", "denoise"),
        split=cfg.get("split", "train"),
        master_seed=args.seed if args.seed is not None else cfg.get("master_seed", 0),
        format=cfg.get("format", "xyz"),
        points_per_cloud=cfg.get("points_per_cloud"),
        noise_fractions=_as_tuple(cfg.get("noise_fractions"),
                                  DatasetConfig.noise_fractions),
        outlier_fractions=_as_tuple(cfg.get("outlier_fractions"),
                                    DatasetConfig.outlier_fractions),
        outlier_noise_fractions=_as_tuple(cfg.get("outlier_noise_fractions"),
                                          DatasetConfig.outlier_noise_fractions),
        outlier_kind=cfg.get("outlier_kind", "gaussian"),
        outlier_sigma_fraction=cfg.get("outlier_sigma_fraction", 0.20),
        outlier_bbox_scale=cfg.get("outlier_bbox_scale", 1.10),
        rejection_threshold_fraction=cfg.get("rejection_threshold_fraction"),
    )
    manifest = generate_dataset(shapes, dconf, args.output)
    print(f"wrote {len(manifest.entries)} dataset entries to {args.output}")
    return 0


def _model_config_from(cfg: dict, head: str) -> ModelConfig:
    kwargs = {"output_dim": 1 if head == "outlier" else 3}
    for key in ("m", "point_feature_widths", "feature_stn_dim", "feature_stn_after",
                "regressor_widths", "qstn_widths", "qstn_fc_widths", "stn_widths",
                "stn_fc_widths", "residual_block_depth", "activation", "batchnorm"):
        if key in cfg:
            value = cfg[key]
            if key.endswith("widths"):
                value = _as_tuple(value, None)
            kwargs[key] = value
    try:
        return ModelConfig(**kwargs)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _train_config_from(cfg: dict, args) -> TrainConfig:
    kwargs = {}
    for key in ("head", "loss", "learning_rate", "init_scheme", "epochs", "batch_size",
                "patches_per_shape_per_epoch", "master_seed", "optimizer", "momentum",
                "alpha", "radius_fraction", "gt_patch_radius_fraction",
                "checkpoint_every", "validate_every"):
        if key in cfg:
            kwargs[key] = cfg[key]
    if args.seed is not None:
        kwargs["master_seed"] = args.seed
    kwargs["threads"] = args.threads
    return TrainConfig(**kwargs)


def cmd_train(args) -> int:
    cfg = _config(args)
    tconf = _train_config_from(cfg, args)
    mconf = _model_config_from(cfg, tconf.head)
    manifest = load_manifest(args.input)
    val_entry = None
    val_shape = cfg.get("validation_shape")
    if val_shape is not None:
        held_out = [e for e in manifest.entries if e.shape_id == val_shape]
        if not held_out:
            raise ConfigError(f"validation shape {val_shape!r} not found in manifest")
        val_entry = held_out[-1]
        manifest = DatasetManifest(
            split=manifest.split, task=manifest.task, master_seed=manifest.master_seed,
            entries=[e for e in manifest.entries if e.shape_id != val_shape],
            root=manifest.root)
    run = train(manifest, mconf, tconf, out_dir=args.output, val_entry=val_entry,
                resume_from=cfg.get("resume_from"))
    final = run.loss_curve[-1] if run.loss_curve else float("nan")
    print(f"trained {tconf.head} head for {tconf.epochs} epochs; "
          f"final mean loss {final:.6g}; checkpoint {run.final_checkpoint}")
    return 0


def _load_head(path, expected_dim: int, role: str):
    net, _, _ = load_checkpoint(path)
    if net.config.output_dim != expected_dim:
        raise CheckpointError(
            f"{role} checkpoint {path} has output_dim={net.config.output_dim}, "
            f"expected {expected_dim}")
    return net


def cmd_clean(args) -> int:
    cfg = _config(args)
    torch.set_num_threads(max(1, args.threads))
    cloud = load_cloud(args.input)
    base = args.config.parent if args.config is not None else Path(".")

    def resolve(key):
        value = cfg.get(key)
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else base / p

    cconf = CleaningConfig(
        radius_fraction=cfg.get("radius_fraction", 0.05),
        iterations=args.iterations if args.iterations is not None
        else cfg.get("iterations", 2),
        inflation_k=cfg.get("inflation_k", 100),
        use_inflation=cfg.get("use_inflation", True),
        outlier_threshold=cfg.get("outlier_threshold", 0.5),
        patch_seed=args.seed if args.seed is not None else cfg.get("patch_seed", 0),
        batch_size=cfg.get("batch_size", 512),
    )
    outlier_net = None
    if not args.skip_outliers:
        outlier_path = resolve("outlier_model")
        if outlier_path is not None:
            outlier_net = _load_head(outlier_path, 1, "outlier")
    denoise_net = None
    denoise_path = resolve("denoise_model")
    if denoise_path is not None:
        denoise_net = _load_head(denoise_path, 3, "denoise")
    if cconf.iterations > 0 and denoise_net is None:
        raise ConfigError("config must name a denoise_model when iterations > 0")
    reference = load_cloud(args.reference) if args.reference is not None else None

    out_path = args.output
    fmt = args.format or (out_path.suffix.lstrip(".") or "xyz")
    hook = None
    if cfg.get("save_intermediates", False):
        def hook(iteration, current):
            save_cloud(current, out_path.with_suffix(f".iter{iteration}.{fmt}"), fmt)

    cleaned, trace = clean(cloud, outlier_net, denoise_net, cconf,
                           skip_outliers=args.skip_outliers, reference=reference,
                           iteration_hook=hook)
    save_cloud(cleaned, out_path, fmt)
    trace.to_json(out_path.with_suffix(".trace.json"))
    print(f"cleaned {len(cloud)} -> {len(cleaned)} points "
          f"({trace.outliers_removed} outliers removed, "
          f"{cconf.iterations} denoise iterations); wrote {out_path}")
    return 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    cleaned = load_cloud(args.input)
    reference = load_cloud(args.reference)
    a, b = normalized_pair(cleaned, reference)
    report = MetricReport(chamfer=chamfer_measure(a, b), rmsd=rmsd(a, b),
                          info={"cleaned": str(args.input),
                                "reference": str(args.reference)})
    if cfg.get("noise_fraction") is not None:
        report.info["noise_fraction"] = cfg["noise_fraction"]

    predicted_path = cfg.get("predicted_labels")
    true_path = cfg.get("true_labels")
    if predicted_path is not None and true_path is not None:
        predicted = np.loadtxt(predicted_path, dtype=int)
        true = np.loadtxt(true_path, dtype=int)
        if predicted.shape != true.shape:
            raise DataMismatchError(
                f"label files disagree in length: {predicted.shape} vs {true.shape}")
        r1 = f_beta(predicted, true, beta=1.0)
        r2 = f_beta(predicted, true, beta=2.0)
        report.precision, report.recall = r1.precision, r1.recall
        report.f1, report.f2 = r1.score, r2.score

    distances = distances_to_reference(a, b)
    if cfg.get("include_distances", False):
        report.per_point_distances = [float(d) for d in distances]
    report.to_json(args.output)
    if cfg.get("color_ply") is not None:
        colors = distance_colors(distances, cfg.get("color_max"))
        save_cloud(cleaned, cfg["color_ply"], "ply", colors=colors)
    print(f"chamfer {report.chamfer:.6g}  rmsd {report.rmsd:.6g}  -> {args.output}")
    return 0


def cmd_report(args) -> int:
    written = render_report(args.input, args.output)
    print(f"wrote {len(written)} report files to {args.output}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (ParseError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return 4
    except (StructuralError, DataMismatchError) as exc:
        print(f"data mismatch: {exc}", file=sys.stderr)
        return 5
    except CloudCleanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
