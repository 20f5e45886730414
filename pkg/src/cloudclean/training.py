"""Training loops for both heads, weight initialization, and gradient checks.

Loss options for the displacement head (``head="denoise"``):

* ``combined`` — weighted nearest/farthest squared patch distance, with the
  ground-truth patches rebuilt every epoch around the sampled noisy centers;
* ``fixed`` — squared distance to the nearest clean neighbor of the noisy
  point, precomputed once before epoch 1 and never refreshed;
* ``matched`` — squared distance to the directly corresponding clean point.

The outlier head trains with the L1 label loss. Initialization follows the
head: Kaiming-uniform for the outlier head, uniform in [-0.001, 0.001] for
the displacement head (whose converged weights are small), with the spatial
transformer output layers zeroed so both transforms start as the identity.
Default learning rates are 1e-4 (outlier) and 1e-8 (denoise); the latter
assumes the default SGD-with-momentum optimizer and is routinely overridden
in small-scale experiment configs.

Runs are reproducible: all randomness derives from ``master_seed`` and the
epoch/cloud indices, so a run resumed from a checkpoint (which carries the
optimizer state) continues exactly where the original run would have gone.
Determinism holds in single-thread mode (``threads=1``).
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .checkpoint import load_checkpoint, save_checkpoint
from .cloud import SpatialIndex, bbox_diagonal
from .dataset import DatasetManifest, derive_seed
from .errors import ConfigError, NumericError
from .losses import (combined_patch_loss, farthest_point_loss, fixed_target_loss,
                     matched_point_loss, nearest_point_loss, outlier_label_loss,
                     precompute_fixed_targets)
from .metrics import chamfer_measure, f_beta, normalized_pair
from .model import ModelConfig, PatchNet
from .patches import extract_patches
from .pipeline import CleaningConfig, denoise_once, inflate

__all__ = ["TrainConfig", "TrainRun", "init_params", "train", "gradient_check",
           "make_loss_fixture", "make_gradcheck_net", "DENOISE_LOSSES"]

DENOISE_LOSSES = ("combined", "fixed", "matched")


@dataclass
class TrainConfig:
    head: str = "denoise"                 # denoise | outlier
    loss: Optional[str] = None            # combined | fixed | matched (denoise only)
    learning_rate: Optional[float] = None
    init_scheme: Optional[str] = None     # kaiming-uniform | small-uniform
    epochs: int = 10
    batch_size: int = 64
    patches_per_shape_per_epoch: int = 500
    master_seed: int = 0
    optimizer: str = "sgd"                # sgd | adam
    momentum: float = 0.9
    alpha: float = 0.99
    radius_fraction: float = 0.05
    gt_patch_radius_fraction: Optional[float] = None  # None → radius_fraction
    checkpoint_every: int = 0             # additionally checkpoint every k epochs
    threads: int = 1
    validate_every: int = 1

    def __post_init__(self):
        if self.head not in ("denoise", "outlier"):
            raise ConfigError(f"unknown head {self.head!r}")
        if self.head == "denoise":
            if self.loss is None:
                self.loss = "combined"
            if self.loss not in DENOISE_LOSSES:
                raise ConfigError(f"denoise loss must be one of {DENOISE_LOSSES}")
        else:
            if self.loss not in (None, "label"):
                raise ConfigError("the outlier head trains with the label loss")
            self.loss = "label"
        if self.learning_rate is None:
            self.learning_rate = 1e-4 if self.head == "outlier" else 1e-8
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be > 0")
        if self.init_scheme is None:
            self.init_scheme = "kaiming-uniform" if self.head == "outlier" else "small-uniform"
        if self.init_scheme not in ("kaiming-uniform", "small-uniform"):
            raise ConfigError(f"unknown init scheme {self.init_scheme!r}")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @property
    def gt_radius_fraction(self) -> float:
        return (self.gt_patch_radius_fraction
                if self.gt_patch_radius_fraction is not None else self.radius_fraction)


@dataclass
class TrainRun:
    loss_curve: list = field(default_factory=list)
    val_curve: list = field(default_factory=list)
    final_checkpoint: Optional[Path] = None
    best_checkpoint: Optional[Path] = None
    net: Optional[PatchNet] = None
    stats: dict = field(default_factory=dict)
    wall_clock_seconds: float = 0.0

    def write_curves_csv(self, path) -> Path:
        path = Path(path)
        lines = ["epoch,train_loss,val_metric\n"]
        for e, loss in enumerate(self.loss_curve, start=1):
            val = self.val_curve[e - 1] if e <= len(self.val_curve) else ""
            lines.append(f"{e},{loss!r},{val!r}\n" if val != "" else f"{e},{loss!r},\n")
        path.write_text("".join(lines))
        return path


def init_params(config: ModelConfig, scheme: str, seed: int) -> PatchNet:
    """Freshly initialized network.

    ``kaiming-uniform``: linear weights uniform in +-sqrt(6 / fan_in);
    ``small-uniform``: linear weights uniform in [-0.001, 0.001]. Biases are
    zero, batch norm scale/shift start at 1/0, and the final layers of both
    spatial transformers are zeroed so the initial transforms are identities.
    Bit-identical for identical seeds.
    """
    if scheme not in ("kaiming-uniform", "small-uniform"):
        raise ValueError(f"unknown init scheme {scheme!r}")
    net = PatchNet(config)
    rng = np.random.default_rng(seed)
    with torch.no_grad():
        for name, param in net.named_parameters():
            if param.dim() >= 2:  # linear weight
                if scheme == "kaiming-uniform":
                    bound = np.sqrt(6.0 / param.shape[1])
                else:
                    bound = 0.001
                values = rng.uniform(-bound, bound, size=tuple(param.shape))
                param.copy_(torch.from_numpy(values))
            elif name.endswith(".bias"):
                param.zero_()
            else:  # batch norm scale
                param.fill_(1.0)
        for transform in (net.qstn.net, net.feature_stn.net):
            transform.final.weight.zero_()
            transform.final.bias.zero_()
    return net


class _CloudData:
    """Per-entry working set: clouds, indexes, radii and fixed targets."""

    def __init__(self, manifest: DatasetManifest, entry, config: TrainConfig):
        self.noisy, self.clean = manifest.load_pair(entry)
        self.labels = self.noisy.labels
        self.index = SpatialIndex(self.noisy)
        diag = bbox_diagonal(self.noisy)
        if diag <= 0:
            raise ConfigError(f"degenerate training cloud {entry.noisy_path}")
        self.r = config.radius_fraction * diag
        self.gt_r = config.gt_radius_fraction * diag
        self.clean_index = SpatialIndex(self.clean)
        self.fixed_targets = None

    def ensure_fixed_targets(self) -> np.ndarray:
        if self.fixed_targets is None:
            self.fixed_targets = precompute_fixed_targets(self.noisy.points,
                                                          self.clean.points)
        return self.fixed_targets


def _optimizer_for(net: PatchNet, config: TrainConfig) -> torch.optim.Optimizer:
    if config.optimizer == "sgd":
        return torch.optim.SGD(net.parameters(), lr=config.learning_rate,
                               momentum=config.momentum)
    return torch.optim.Adam(net.parameters(), lr=config.learning_rate)


def _optimizer_state_tensors(net: PatchNet, opt: torch.optim.Optimizer) -> dict:
    out = {}
    for name, param in net.named_parameters():
        state = opt.state.get(param, {})
        for key, value in state.items():
            if isinstance(value, torch.Tensor):
                out[f"{name}.{key}"] = value
    return out


def _restore_optimizer_state(net: PatchNet, opt: torch.optim.Optimizer, saved: dict):
    for name, param in net.named_parameters():
        entries = {k[len(name) + 1:]: v for k, v in saved.items()
                   if k.startswith(name + ".")}
        if entries:
            opt.state[param] = {k: v.clone() for k, v in entries.items()}


def _epoch_items(data: list, config: TrainConfig, epoch: int, m: int, stats: dict):
    """Sample query points, extract patches and gather loss targets."""
    items = []
    for ci, cd in enumerate(data):
        n = len(cd.noisy)
        count = min(config.patches_per_shape_per_epoch, n)
        rng = np.random.default_rng([config.master_seed, 17, epoch, ci])
        query = np.sort(rng.choice(n, size=count, replace=False))
        patches = extract_patches(cd.noisy, cd.index, query,
                                  cd.r, m, derive_seed(config.master_seed, 23, epoch, ci))
        if config.head == "outlier":
            for p, qi in zip(patches, query):
                items.append((p, cd, float(cd.labels[qi]), qi))
            continue
        if config.loss == "combined":
            stats["target_refreshes"] = stats.get("target_refreshes", 0) + 1
            balls = cd.clean_index.radius_neighbors_bulk(cd.noisy.points[query], cd.gt_r)
            for p, qi, ball in zip(patches, query, balls):
                if len(ball) == 0:
                    stats["empty_gt_patches"] = stats.get("empty_gt_patches", 0) + 1
                    stats.setdefault("_epoch_empty", 0)
                    stats["_epoch_empty"] += 1
                    continue
                items.append((p, cd, cd.clean.points[ball], qi))
        elif config.loss == "fixed":
            if cd.fixed_targets is None:  # precomputed once, never refreshed
                stats["target_refreshes"] = stats.get("target_refreshes", 0) + 1
            targets = cd.ensure_fixed_targets()
            for p, qi in zip(patches, query):
                items.append((p, cd, targets[qi], qi))
        else:  # matched: the noisy cloud perturbs the clean one index by index
            for p, qi in zip(patches, query):
                items.append((p, cd, cd.clean.points[qi], qi))
    return items


def _batch_loss(net: PatchNet, batch: list, config: TrainConfig) -> torch.Tensor:
    x = torch.as_tensor(np.stack([item[0].normalized_points for item in batch]),
                        dtype=torch.float32)
    out = net(x)
    if config.head == "outlier":
        labels = torch.as_tensor([item[2] for item in batch], dtype=torch.float32)
        probs = torch.sigmoid(out[:, 0])
        return outlier_label_loss(probs, labels)
    centers = torch.as_tensor(np.stack([item[1].noisy.points[item[3]] for item in batch]),
                              dtype=torch.float32)
    scales = torch.as_tensor([item[0].scale for item in batch], dtype=torch.float32)
    cleaned = centers + out * scales.unsqueeze(1)
    if config.loss == "combined":
        kmax = max(len(item[2]) for item in batch)
        gt = np.zeros((len(batch), kmax, 3))
        mask = np.zeros((len(batch), kmax), dtype=bool)
        for bi, item in enumerate(batch):
            gt[bi, :len(item[2])] = item[2]
            mask[bi, :len(item[2])] = True
        return combined_patch_loss(cleaned, torch.as_tensor(gt, dtype=torch.float32),
                                   torch.as_tensor(mask), alpha=config.alpha)
    targets = torch.as_tensor(np.stack([item[2] for item in batch]), dtype=torch.float32)
    if config.loss == "fixed":
        return fixed_target_loss(cleaned, targets)
    return matched_point_loss(cleaned, targets)


def _validate(net: PatchNet, val_data: _CloudData, config: TrainConfig) -> float:
    cc = CleaningConfig(radius_fraction=config.radius_fraction,
                        patch_seed=derive_seed(config.master_seed, 41))
    if config.head == "outlier":
        from .pipeline import _head_outputs  # same batched path as the pipeline
        logits = _head_outputs(val_data.noisy, net, val_data.r, cc)[:, 0]
        predicted = (1.0 / (1.0 + np.exp(-logits))) > 0.5
        return float(f_beta(predicted, val_data.labels, beta=2.0).score)
    field = denoise_once(val_data.noisy, net, cc, patch_radius=val_data.r)
    field = inflate(field, val_data.noisy, cc.inflation_k if len(val_data.noisy) > cc.inflation_k
                    else max(1, len(val_data.noisy) - 1))
    cleaned = val_data.noisy.with_points(val_data.noisy.points + field.vectors)
    a, b = normalized_pair(cleaned, val_data.clean)
    return chamfer_measure(a, b)


def train(manifest: DatasetManifest, model_config: ModelConfig, config: TrainConfig,
          out_dir=None, val_entry=None, resume_from=None) -> TrainRun:
    """Optimize one head over every entry of a training manifest.

    ``val_entry`` (a manifest entry, typically of a held-out shape) enables
    per-epoch validation: Chamfer measure for the displacement head, F2 score
    for the outlier head; the best-validation checkpoint is kept alongside
    the final one. ``resume_from`` continues a run from a checkpoint saved by
    this function.
    """
    start_time = time.time()
    torch.set_num_threads(max(1, config.threads))
    if manifest.split != "train":
        raise ConfigError(f"training expects a train-split manifest, got {manifest.split!r}")
    entries = [e for e in manifest.entries
               if config.head == "denoise" or e.labels_path is not None]
    if not entries:
        raise ConfigError("manifest holds no usable training entries for this head")
    if config.head == "outlier" and manifest.task != "outliers":
        raise ConfigError("the outlier head needs an outlier-task manifest")

    data = [_CloudData(manifest, e, config) for e in entries]
    val_data = _CloudData(manifest, val_entry, config) if val_entry is not None else None

    start_epoch = 0
    run = TrainRun(stats={"empty_gt_patches": 0})
    if resume_from is not None:
        net, meta, extra = load_checkpoint(resume_from)
        if net.config != model_config:
            raise ConfigError("resume checkpoint was built with a different model config")
        start_epoch = int(meta.get("epoch", 0))
        run.loss_curve = list(meta.get("loss_curve", []))
        run.val_curve = list(meta.get("val_curve", []))
    else:
        net = init_params(model_config, config.init_scheme,
                          derive_seed(config.master_seed, 5))
        extra = {}
    optimizer = _optimizer_for(net, config)
    if extra:
        _restore_optimizer_state(net, optimizer, extra)

    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)

    def checkpoint(path_name: str, epoch: int) -> Optional[Path]:
        if out_dir is None:
            return None
        meta = {"epoch": epoch, "master_seed": config.master_seed,
                "head": config.head, "loss": config.loss,
                "loss_curve": run.loss_curve, "val_curve": run.val_curve}
        return save_checkpoint(net, out_dir / path_name, metadata=meta,
                               extra_tensors=_optimizer_state_tensors(net, optimizer))

    last_good = copy.deepcopy(net.state_dict())
    best_metric = None
    for epoch in range(start_epoch, config.epochs):
        run.stats.pop("_epoch_empty", None)
        items = _epoch_items(data, config, epoch, model_config.m, run.stats)
        sampled = sum(min(config.patches_per_shape_per_epoch, len(cd.noisy)) for cd in data)
        if config.head == "denoise" and config.loss == "combined" \
                and run.stats.get("_epoch_empty", 0) > 0.5 * sampled:
            raise ConfigError(
                "more than half of the sampled ground-truth patches are empty; "
                "the ground-truth patch radius is too small for this data")
        if not items:
            raise ConfigError("no usable training samples were produced this epoch")
        order = np.random.default_rng([config.master_seed, 31, epoch]).permutation(len(items))
        net.train()
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            batch = [items[i] for i in order[start:start + config.batch_size]]
            optimizer.zero_grad()
            loss = _batch_loss(net, batch, config)
            if not torch.isfinite(loss):
                net.load_state_dict(last_good)
                checkpoint("checkpoint_aborted.ckpt", epoch)
                raise NumericError(f"non-finite loss in epoch {epoch + 1}; "
                                   "aborted with the last good parameters")
            loss.backward()
            optimizer.step()
            total += float(loss.detach()) * len(batch)
        run.loss_curve.append(total / len(items))
        net.eval()
        if val_data is not None and (epoch + 1) % config.validate_every == 0:
            metric = _validate(net, val_data, config)
            run.val_curve.append(metric)
            better = (best_metric is None
                      or (config.head == "denoise" and metric < best_metric)
                      or (config.head == "outlier" and metric > best_metric))
            if better:
                best_metric = metric
                run.best_checkpoint = checkpoint("checkpoint_best.ckpt", epoch + 1)
        last_good = copy.deepcopy(net.state_dict())
        if config.checkpoint_every and (epoch + 1) % config.checkpoint_every == 0:
            checkpoint(f"checkpoint_epoch{epoch + 1}.ckpt", epoch + 1)

    run.net = net
    run.final_checkpoint = checkpoint("checkpoint_final.ckpt", config.epochs)
    if out_dir is not None:
        run.write_curves_csv(out_dir / "curves.csv")
    run.stats.pop("_epoch_empty", None)
    run.wall_clock_seconds = time.time() - start_time
    return run


# ---------------------------------------------------------------------------
# gradient verification

GRADCHECK_LOSSES = ("label", "matched", "nearest", "farthest", "combined", "fixed")


def make_gradcheck_net(model_config: ModelConfig, seed: int) -> PatchNet:
    """Random small net suitable for finite-difference verification.

    Kaiming weights plus small random biases everywhere. Generic biases
    matter: with all-zero biases a patch row whose block-0 activations all
    die lands exactly on every downstream ReLU kink, where no gradient is
    defined and finite differences cannot agree with any subgradient choice.
    """
    net = init_params(model_config, "kaiming-uniform", seed)
    rng = np.random.default_rng([seed, 97])
    with torch.no_grad():
        for name, param in net.named_parameters():
            if name.endswith(".bias"):
                values = rng.uniform(-0.1, 0.1, size=tuple(param.shape))
                param.copy_(torch.from_numpy(values))
        if model_config.output_dim == 1:
            # keep the classifier head in the sigmoid's responsive range;
            # saturated logits would zero every gradient and make the check
            # vacuous
            probe = torch.as_tensor(
                rng.uniform(-0.6, 0.6, size=(8, model_config.m, 3)),
                dtype=torch.float32)
            net.eval()
            scale = float(net(probe)[:, 0].abs().mean())
            if scale > 1.0:
                net.head.weight.mul_(1.0 / scale)
                net.head.bias.mul_(1.0 / scale)
    return net


def make_loss_fixture(model_config: ModelConfig, loss: str, seed: int,
                      batch: int = 2, gt_points: int = 12) -> dict:
    """Random, tie-free inputs for :func:`gradient_check`."""
    rng = np.random.default_rng(seed)
    fixture = {
        "loss": loss,
        "x": rng.normal(0, 0.4, size=(batch, model_config.m, 3)),
        "centers": rng.normal(0, 1.0, size=(batch, 3)),
        "scales": rng.uniform(0.5, 2.0, size=batch),
        "alpha": 0.99,
    }
    if loss == "label":
        fixture["labels"] = rng.integers(0, 2, size=batch).astype(np.float64)
    elif loss in ("matched", "fixed"):
        fixture["targets"] = rng.normal(0, 1.0, size=(batch, 3))
    else:
        fixture["gt"] = rng.normal(0, 1.0, size=(batch, gt_points, 3))
    return fixture


def _fixture_loss(net: PatchNet, fixture: dict) -> torch.Tensor:
    dtype = next(net.parameters()).dtype
    x = torch.as_tensor(fixture["x"], dtype=dtype)
    out = net(x)
    loss = fixture["loss"]
    if loss == "label":
        probs = torch.sigmoid(out[:, 0])
        return outlier_label_loss(probs, torch.as_tensor(fixture["labels"], dtype=dtype))
    centers = torch.as_tensor(fixture["centers"], dtype=dtype)
    scales = torch.as_tensor(fixture["scales"], dtype=dtype)
    cleaned = centers + out * scales.unsqueeze(1)
    if loss in ("matched", "fixed"):
        target = torch.as_tensor(fixture["targets"], dtype=dtype)
        return (matched_point_loss if loss == "matched" else fixed_target_loss)(cleaned, target)
    gt = torch.as_tensor(fixture["gt"], dtype=dtype)
    if loss == "nearest":
        return nearest_point_loss(cleaned, gt)
    if loss == "farthest":
        return farthest_point_loss(cleaned, gt)
    return combined_patch_loss(cleaned, gt, alpha=fixture.get("alpha", 0.99))


def gradient_check(net: PatchNet, fixture: dict, step: float = 1e-6,
                   max_coords: Optional[int] = None, seed: int = 0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Runs on a float64 copy of the network in eval mode (a pure function of
    the parameters). The central differences at steps h and h/2 are Richardson
    extrapolated, which cancels the h^2 truncation term; paths through the
    rotation predictor have large higher-order derivatives that plain central
    differences at a fixed step would misestimate. ``max_coords`` caps the
    number of parameter coordinates probed per tensor (a seeded sample); None
    probes all of them. The relative error falls back to the absolute error
    below a 1e-8 floor.
    """
    if fixture.get("loss") not in GRADCHECK_LOSSES:
        raise ValueError(f"fixture loss must be one of {GRADCHECK_LOSSES}")
    net64 = copy.deepcopy(net).double()
    net64.eval()
    for p in net64.parameters():
        p.requires_grad_(True)
    loss = _fixture_loss(net64, fixture)
    grads = torch.autograd.grad(loss, list(net64.parameters()))
    base = abs(float(loss.detach()))
    # Gradients smaller than this sit below the finite-difference noise floor
    # (eps * |loss| / step); compare them absolutely instead of relatively.
    tiny = 1e-5 * (1.0 + base)
    rng = np.random.default_rng(seed)
    worst = 0.0
    with torch.no_grad():
        for param, grad in zip(net64.parameters(), grads):
            flat = param.reshape(-1)
            gflat = grad.reshape(-1)
            coords = np.arange(flat.numel())
            if max_coords is not None and flat.numel() > max_coords:
                coords = rng.choice(flat.numel(), size=max_coords, replace=False)
            for c in coords:
                original = float(flat[c])

                def eval_at(offset):
                    flat[c] = original + offset
                    return float(_fixture_loss(net64, fixture))

                # Shrink the bracket while the two central differences
                # disagree: that flags a piecewise-linearity boundary (an
                # activation kink) inside it, where any fixed-step difference
                # would misreport the one-sided slope at the point itself.
                h = step
                for _ in range(4):
                    d_full = (eval_at(h) - eval_at(-h)) / (2 * h)
                    d_half = (eval_at(h / 2) - eval_at(-h / 2)) / h
                    agree_tol = 1e-4 * max(abs(d_full), abs(d_half)) \
                        + 100 * np.finfo(np.float64).eps * (1.0 + base) / h
                    if abs(d_full - d_half) <= agree_tol:
                        break
                    h /= 8
                flat[c] = original
                numeric = (4 * d_half - d_full) / 3
                analytic = float(gflat[c])
                denom = max(abs(numeric), abs(analytic))
                err = abs(analytic - numeric) if denom < tiny \
                    else abs(analytic - numeric) / denom
                worst = max(worst, err)
    return worst
