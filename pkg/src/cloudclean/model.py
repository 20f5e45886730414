"""Order-invariant patch network shared by the outlier and displacement heads.

The network consumes a normalized patch and emits either an outlier logit
(``output_dim=1``) or a displacement vector in patch-normalized units
(``output_dim=3``). Pipeline:

1. a quaternion spatial transformer (QSTN) predicts a rotation that brings
   the patch to a canonical orientation;
2. a per-point feature extractor with shared weights maps each row to a
   feature vector, with a square feature transform applied to mid-level
   features;
3. symmetric sum pooling collapses the per-point features into one patch
   descriptor (padded zero rows pass through and contribute a constant term);
4. a regressor maps the descriptor to the head output;
5. displacement outputs are rotated back from the canonical orientation.

Every stage is built from two-layer residual blocks, making the stack twice
as deep as the plain MLPs it replaces.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict
from typing import Sequence, Union

import numpy as np
import torch
import torch.nn as nn

from .errors import NumericError, StructuralError
from .patches import Patch

__all__ = ["ModelConfig", "PatchNet", "quaternion_to_rotation",
           "quaternion_to_rotation_torch", "forward", "forward_batch",
           "predict_outlier_probability", "predict_displacement"]


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters for one network head.

    Default widths follow the PointNet-style lineage: per-point extractor
    64-64-64-128-1024, feature transform on the 64-dim mid-level features,
    regressor 512-256-output. ``output_dim`` is 1 for the outlier head and 3
    for the displacement head.
    """

    m: int = 500
    output_dim: int = 3
    point_feature_widths: tuple = (64, 64, 64, 128, 1024)
    feature_stn_dim: int = 64
    feature_stn_after: int = 2   # number of extractor blocks before the feature STN
    regressor_widths: tuple = (512, 256)
    qstn_widths: tuple = (64, 128, 1024)
    qstn_fc_widths: tuple = (512, 256)
    stn_widths: tuple = (64, 128, 1024)
    stn_fc_widths: tuple = (512, 256)
    residual_block_depth: int = 2
    activation: str = "relu"
    batchnorm: bool = True

    def __post_init__(self):
        for name in ("point_feature_widths", "regressor_widths", "qstn_widths",
                     "qstn_fc_widths", "stn_widths", "stn_fc_widths"):
            widths = getattr(self, name)
            object.__setattr__(self, name, tuple(int(w) for w in widths))
            if any(w < 1 for w in getattr(self, name)):
                raise ValueError(f"{name} must be positive, got {widths}")
        if self.output_dim not in (1, 3):
            raise ValueError(f"output_dim must be 1 or 3, got {self.output_dim}")
        if not 1 <= self.feature_stn_after <= len(self.point_feature_widths):
            raise ValueError("feature_stn_after out of range")
        expected = self.point_feature_widths[self.feature_stn_after - 1]
        if self.feature_stn_dim != expected:
            raise ValueError(
                f"feature_stn_dim {self.feature_stn_dim} must equal the extractor "
                f"width {expected} at the insertion point")
        if self.residual_block_depth < 2:
            raise ValueError("residual blocks need at least 2 layers")
        if self.activation not in ("relu", "tanh"):
            raise ValueError(f"unsupported activation {self.activation!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        for name in ("point_feature_widths", "regressor_widths", "qstn_widths",
                     "qstn_fc_widths", "stn_widths", "stn_fc_widths"):
            if name in d:
                d[name] = tuple(d[name])
        return cls(**d)


def quaternion_to_rotation(q) -> np.ndarray:
    """Proper rotation matrix for a (w, x, y, z) quaternion.

    The quaternion is normalized internally; a zero quaternion has no
    direction and is rejected.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError(f"quaternion must have 4 components, got shape {q.shape}")
    norm = np.linalg.norm(q)
    if norm == 0:
        raise ValueError("zero quaternion does not define a rotation")
    w, x, y, z = q / norm
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quaternion_to_rotation_torch(q: torch.Tensor) -> torch.Tensor:
    """Batched differentiable variant of :func:`quaternion_to_rotation`.

    Normalization is regularized so an exactly-zero quaternion maps to the
    identity rotation instead of NaNs.
    """
    norm = torch.sqrt((q * q).sum(dim=-1, keepdim=True) + 1e-12)
    w, x, y, z = torch.unbind(q / norm, dim=-1)
    one = torch.ones_like(w)
    rows = [
        torch.stack([one - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], dim=-1),
        torch.stack([2 * (x * y + w * z), one - 2 * (x * x + z * z), 2 * (y * z - w * x)], dim=-1),
        torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), one - 2 * (x * x + y * y)], dim=-1),
    ]
    return torch.stack(rows, dim=-2)


def _make_activation(name: str) -> nn.Module:
    return nn.ReLU() if name == "relu" else nn.Tanh()


class ResBlock(nn.Module):
    """Residual block of ``depth`` linear layers with a projected skip path.

    Operates on the trailing feature dimension, so the same block serves both
    per-point tensors (B, m, C) and pooled vectors (B, C). Batch norms, when
    enabled, normalize over all leading dimensions.
    """

    def __init__(self, in_dim: int, out_dim: int, depth: int, batchnorm: bool,
                 activation: str):
        super().__init__()
        dims = [in_dim] + [out_dim] * depth
        self.linears = nn.ModuleList(nn.Linear(dims[i], dims[i + 1]) for i in range(depth))
        self.norms = nn.ModuleList(
            nn.BatchNorm1d(out_dim) if batchnorm else nn.Identity() for _ in range(depth))
        self.project = nn.Linear(in_dim, out_dim) if in_dim != out_dim else None
        # normalized like the main path; an unnormalized shortcut lets the
        # sum-pooling scale blow-up reach the head and saturate it
        self.project_norm = nn.BatchNorm1d(out_dim) \
            if batchnorm and self.project is not None else nn.Identity()
        self.act = _make_activation(activation)

    @staticmethod
    def _apply_norm(norm: nn.Module, x: torch.Tensor) -> torch.Tensor:
        if isinstance(norm, nn.Identity):
            return x
        flat = x.reshape(-1, x.shape[-1])
        return norm(flat).reshape(x.shape)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        skip = x if self.project is None else self._apply_norm(self.project_norm,
                                                               self.project(x))
        h = x
        last = len(self.linears) - 1
        for i, (lin, norm) in enumerate(zip(self.linears, self.norms)):
            h = self._apply_norm(norm, lin(h))
            if i != last:
                h = self.act(h)
        return self.act(h + skip)


class _TransformNet(nn.Module):
    """Shared body of the spatial transformers: per-point blocks, sum pooling,
    fully connected blocks, and a final linear layer (zeroed at init so the
    transform starts as the identity)."""

    def __init__(self, in_dim: int, point_widths, fc_widths, out_dim: int,
                 depth: int, batchnorm: bool, activation: str):
        super().__init__()
        blocks = []
        prev = in_dim
        for w in point_widths:
            blocks.append(ResBlock(prev, w, depth, batchnorm, activation))
            prev = w
        self.point_blocks = nn.ModuleList(blocks)
        fcs = []
        for w in fc_widths:
            fcs.append(ResBlock(prev, w, depth, batchnorm, activation))
            prev = w
        self.fc_blocks = nn.ModuleList(fcs)
        self.final = nn.Linear(prev, out_dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = x
        for block in self.point_blocks:
            h = block(h)
        h = h.sum(dim=1)
        for block in self.fc_blocks:
            h = block(h)
        return self.final(h)


class QSTN(nn.Module):
    """Predicts the canonicalizing rotation as a quaternion.

    The raw 4-vector is offset by the identity quaternion (1, 0, 0, 0) before
    normalization, so a zero-initialized transformer yields the identity
    rotation.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.net = _TransformNet(3, config.qstn_widths, config.qstn_fc_widths, 4,
                                 config.residual_block_depth, config.batchnorm,
                                 config.activation)
        self.register_buffer("identity_bias", torch.tensor([1.0, 0.0, 0.0, 0.0]))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        q = self.net(x) + self.identity_bias
        return quaternion_to_rotation_torch(q)


class FeatureSTN(nn.Module):
    """Square transform of mid-level point features, offset by the identity."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        d = config.feature_stn_dim
        self.dim = d
        self.net = _TransformNet(d, config.stn_widths, config.stn_fc_widths, d * d,
                                 config.residual_block_depth, config.batchnorm,
                                 config.activation)
        self.register_buffer("identity", torch.eye(d))

    def forward(self, feats: torch.Tensor) -> torch.Tensor:
        mat = self.net(feats).reshape(-1, self.dim, self.dim) + self.identity
        return torch.bmm(feats, mat)


class PatchNet(nn.Module):
    """Full patch network for one head; see the module docstring."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.qstn = QSTN(config)
        blocks = []
        prev = 3
        for w in config.point_feature_widths:
            blocks.append(ResBlock(prev, w, config.residual_block_depth,
                                   config.batchnorm, config.activation))
            prev = w
        self.point_blocks = nn.ModuleList(blocks)
        self.feature_stn = FeatureSTN(config)
        reg = []
        for w in config.regressor_widths:
            reg.append(ResBlock(prev, w, config.residual_block_depth,
                                config.batchnorm, config.activation))
            prev = w
        self.regressor_blocks = nn.ModuleList(reg)
        self.head = nn.Linear(prev, config.output_dim)

    def point_features(self, x: torch.Tensor) -> torch.Tensor:
        """Canonicalize and featurize each row of a (B, n, 3) patch tensor."""
        rotation = self.qstn(x)
        h = torch.bmm(x, rotation.transpose(1, 2))
        for i, block in enumerate(self.point_blocks):
            h = block(h)
            if i + 1 == self.config.feature_stn_after:
                h = self.feature_stn(h)
        return h, rotation

    def pooled_feature(self, x: torch.Tensor) -> torch.Tensor:
        """Sum-pooled patch descriptor; accepts any row count (test hook)."""
        h, _ = self.point_features(x)
        return h.sum(dim=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 3 or x.shape[1] != self.config.m or x.shape[2] != 3:
            raise StructuralError(
                f"patch batch must have shape (B, {self.config.m}, 3), got {tuple(x.shape)}")
        h, rotation = self.point_features(x)
        h = h.sum(dim=1)
        for block in self.regressor_blocks:
            h = block(h)
        out = self.head(h)
        if self.config.output_dim == 3:
            # back from the canonical orientation to world space
            out = torch.bmm(out.unsqueeze(1), rotation).squeeze(1)
        return out


def _locate_nonfinite(net: PatchNet, x: torch.Tensor) -> str:
    """Name of the first module emitting a non-finite value, for diagnostics."""
    offender = []
    hooks = []

    def make_hook(name):
        def hook(_module, _inputs, output):
            if not offender and isinstance(output, torch.Tensor) \
                    and not torch.isfinite(output).all():
                offender.append(name)
        return hook

    for name, module in net.named_modules():
        if name:
            hooks.append(module.register_forward_hook(make_hook(name)))
    try:
        with torch.no_grad():
            net(x)
    finally:
        for h in hooks:
            h.remove()
    return offender[0] if offender else "<unknown>"


def _patch_tensor(patches: Union[Patch, Sequence[Patch]], net: PatchNet) -> torch.Tensor:
    if isinstance(patches, Patch):
        patches = [patches]
    m = net.config.m
    for p in patches:
        if p.m != m:
            raise StructuralError(f"patch has {p.m} rows but the model expects {m}")
    arr = np.stack([p.normalized_points for p in patches])
    dtype = next(net.parameters()).dtype
    return torch.as_tensor(arr, dtype=dtype)


def forward_batch(patches: Sequence[Patch], net: PatchNet,
                  batch_size: int = 512) -> np.ndarray:
    """Run the network on many patches in eval mode; returns (N, output_dim)."""
    was_training = net.training
    net.eval()
    outs = []
    try:
        with torch.no_grad():
            for start in range(0, len(patches), batch_size):
                chunk = patches[start:start + batch_size]
                x = _patch_tensor(chunk, net)
                out = net(x)
                if not torch.isfinite(out).all():
                    raise NumericError(
                        f"non-finite activation in layer {_locate_nonfinite(net, x)}")
                outs.append(out.cpu().double().numpy())
    finally:
        if was_training:
            net.train()
    return np.concatenate(outs, axis=0)


def forward(patch: Patch, net: PatchNet) -> np.ndarray:
    """Head output for one patch: a 3-vector in patch-normalized units for the
    displacement head, or a 1-element logit for the outlier head."""
    return forward_batch([patch], net)[0]


def predict_outlier_probability(patch: Patch, net: PatchNet) -> float:
    """Probability that the patch center is an outlier (classified when > 0.5)."""
    if net.config.output_dim != 1:
        raise StructuralError("outlier prediction needs an output_dim=1 head")
    logit = forward(patch, net)[0]
    return float(1.0 / (1.0 + np.exp(-logit)))


def predict_displacement(patch: Patch, net: PatchNet) -> np.ndarray:
    """Correction vector for the patch center, in model units."""
    if net.config.output_dim != 3:
        raise StructuralError("displacement prediction needs an output_dim=3 head")
    return forward(patch, net) * patch.scale
