"""Checkpoint container: JSON header + raw little-endian float32 tensors.

Layout: an 8-byte magic string, a little-endian uint32 header length, the
UTF-8 JSON header, then the tensor payload. The header declares the model
config, free-form metadata, and the tensor manifest (name + shape) in payload
order. The loader rebuilds the network from the config and validates every
tensor shape against it, so a checkpoint cannot silently load into the wrong
architecture.

Optimizer state for exact training resume travels in the same payload under
an ``optim/`` name prefix.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from .errors import CheckpointError
from .model import ModelConfig, PatchNet

__all__ = ["save_checkpoint", "load_checkpoint"]

MAGIC = b"CLDCLN01"
FORMAT_VERSION = 1


def _float_state(net: PatchNet) -> dict:
    # num_batches_tracked buffers are int64 counters that the default-momentum
    # batch norms never consult; everything else in the state dict is float.
    return {k: v for k, v in net.state_dict().items() if v.dtype.is_floating_point}


def save_checkpoint(net: PatchNet, path, metadata: Optional[dict] = None,
                    extra_tensors: Optional[dict] = None) -> Path:
    """Write the network (and optional ``optim/``-prefixed extras) to disk."""
    path = Path(path)
    tensors = dict(_float_state(net))
    for name, value in (extra_tensors or {}).items():
        tensors[f"optim/{name}"] = torch.as_tensor(value)
    manifest = [{"name": k, "shape": list(v.shape)} for k, v in tensors.items()]
    header = {
        "format_version": FORMAT_VERSION,
        "config": net.config.to_dict(),
        "metadata": metadata or {},
        "tensors": manifest,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        for k in tensors:
            fh.write(tensors[k].detach().cpu().numpy().astype("<f4").tobytes())
    return path


def load_checkpoint(path) -> tuple[PatchNet, dict, dict]:
    """Rebuild (net, metadata, extra_tensors) from a checkpoint file."""
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint file")
    (header_len,) = struct.unpack("<I", raw[8:12])
    try:
        header = json.loads(raw[12:12 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"corrupt checkpoint header in {path}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"unsupported checkpoint format version {header.get('format_version')!r}")
    config = ModelConfig.from_dict(header["config"])
    net = PatchNet(config)
    expected = _float_state(net)
    offset = 12 + header_len
    loaded = {}
    extra = {}
    for item in header["tensors"]:
        name, shape = item["name"], tuple(item["shape"])
        count = int(np.prod(shape)) if shape else 1
        end = offset + 4 * count
        if end > len(raw):
            raise CheckpointError(f"checkpoint {path} truncated at tensor {name}")
        arr = np.frombuffer(raw[offset:end], dtype="<f4").reshape(shape)
        offset = end
        if name.startswith("optim/"):
            extra[name[len("optim/"):]] = torch.from_numpy(arr.copy())
            continue
        if name not in expected:
            raise CheckpointError(f"checkpoint tensor {name} not in model built "
                                  f"from the stored config")
        if tuple(expected[name].shape) != shape:
            raise CheckpointError(
                f"checkpoint tensor {name} has shape {shape}, model expects "
                f"{tuple(expected[name].shape)}")
        loaded[name] = torch.from_numpy(arr.copy())
    missing = set(expected) - set(loaded)
    if missing:
        raise CheckpointError(f"checkpoint is missing tensors: {sorted(missing)}")
    net.load_state_dict(loaded, strict=False)
    return net, header["metadata"], extra
