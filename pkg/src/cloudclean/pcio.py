"""Point cloud file I/O.

Two interchange formats are supported:

* ``xyz`` — ASCII, one point per line, three decimal floats separated by
  single spaces, newline terminated.
* ``ply`` — binary little-endian PLY with float32 x/y/z properties and
  optional uchar red/green/blue (used for error-colored exports).

Outlier labels travel in a sibling ``.outliers`` file holding one '0' or '1'
line per point, aligned by index. Round trips preserve coordinates to 32-bit
float precision.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .cloud import PointCloud
from .errors import ParseError, StructuralError

__all__ = ["load_cloud", "save_cloud", "labels_path_for", "FORMATS"]

FORMATS = ("xyz", "ply")


def labels_path_for(path) -> Path:
    """Path of the sibling label file for a cloud file."""
    return Path(path).with_suffix(".outliers")


def _format_coord(value: float) -> str:
    # Shortest decimal string that round-trips the float32 value exactly.
    return np.format_float_positional(np.float32(value), unique=True, trim="0")


def _detect_format(path: Path, format: Optional[str]) -> str:
    if format is None:
        format = path.suffix.lstrip(".").lower()
    if format not in FORMATS:
        raise ValueError(f"unsupported cloud format {format!r}, expected one of {FORMATS}")
    return format


def save_cloud(cloud: PointCloud, path, format: Optional[str] = None,
               colors: Optional[np.ndarray] = None) -> Path:
    """Write a cloud to disk; labels, when present, go to a sibling file.

    ``colors`` (N, 3) uint8 is only honored by the ply format.
    """
    path = Path(path)
    format = _detect_format(path, format)
    pts = cloud.points.astype(np.float32)
    if format == "xyz":
        lines = []
        for x, y, z in pts:
            lines.append(f"{_format_coord(x)} {_format_coord(y)} {_format_coord(z)}\n")
        path.write_text("".join(lines))
    else:
        _write_ply(path, pts, colors)
    if cloud.labels is not None:
        labels_path_for(path).write_text("".join(f"{int(v)}\n" for v in cloud.labels))
    return path


def load_cloud(path, format: Optional[str] = None) -> PointCloud:
    """Read a cloud; picks up a sibling ``.outliers`` file when one exists."""
    path = Path(path)
    format = _detect_format(path, format)
    if format == "xyz":
        pts = _read_xyz(path)
    else:
        pts = _read_ply(path)
    labels = None
    lpath = labels_path_for(path)
    if lpath.exists():
        labels = _read_labels(lpath, expected=len(pts))
    return PointCloud(pts, labels)


def _read_xyz(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) != 3:
                raise ParseError(f"expected 3 coordinates, got {len(tokens)}", line=lineno)
            try:
                rows.append([float(t) for t in tokens])
            except ValueError:
                raise ParseError(f"non-numeric coordinate in {line!r}", line=lineno) from None
    if not rows:
        raise ParseError(f"{path} contains no points")
    return np.asarray(rows, dtype=np.float64)


def _read_labels(path: Path, expected: int) -> np.ndarray:
    values = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            if line not in ("0", "1"):
                raise ParseError(f"label must be 0 or 1, got {line!r}", line=lineno)
            values.append(int(line))
    if len(values) != expected:
        raise StructuralError(
            f"{path} holds {len(values)} labels for a {expected}-point cloud"
        )
    return np.asarray(values, dtype=np.uint8)


def _write_ply(path: Path, pts: np.ndarray, colors: Optional[np.ndarray]) -> None:
    n = pts.shape[0]
    header = ["ply", "format binary_little_endian 1.0", f"element vertex {n}",
              "property float x", "property float y", "property float z"]
    if colors is not None:
        colors = np.asarray(colors, dtype=np.uint8)
        if colors.shape != (n, 3):
            raise StructuralError(f"colors must have shape ({n}, 3), got {colors.shape}")
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    with open(path, "wb") as fh:
        fh.write(("\n".join(header) + "\n").encode("ascii"))
        if colors is None:
            fh.write(pts.astype("<f4").tobytes())
        else:
            row = struct.Struct("<fffBBB")
            for (x, y, z), (r, g, b) in zip(pts, colors):
                fh.write(row.pack(x, y, z, r, g, b))


_PLY_SIZES = {"float": 4, "float32": 4, "double": 8, "float64": 8,
              "uchar": 1, "uint8": 1, "char": 1, "int8": 1,
              "short": 2, "ushort": 2, "int": 4, "uint": 4, "int32": 4, "uint32": 4}


def _read_ply(path: Path) -> np.ndarray:
    with open(path, "rb") as fh:
        magic = fh.readline().strip()
        if magic != b"ply":
            raise ParseError(f"{path} is not a PLY file")
        fmt = None
        n_vertex = None
        properties = []  # (name, type) of the vertex element
        in_vertex = False
        lineno = 1
        while True:
            line = fh.readline()
            lineno += 1
            if not line:
                raise ParseError("unexpected end of PLY header", line=lineno)
            tokens = line.decode("ascii", errors="replace").split()
            if not tokens:
                continue
            if tokens[0] == "format":
                fmt = tokens[1]
            elif tokens[0] == "element":
                in_vertex = tokens[1] == "vertex"
                if in_vertex:
                    n_vertex = int(tokens[2])
            elif tokens[0] == "property" and in_vertex:
                properties.append((tokens[2], tokens[1]))
            elif tokens[0] == "end_header":
                break
        if fmt != "binary_little_endian":
            raise ParseError(f"unsupported PLY format {fmt!r} (binary little-endian only)")
        if n_vertex is None:
            raise ParseError("PLY header declares no vertex element")
        offsets = {}
        stride = 0
        for name, typ in properties:
            if typ not in _PLY_SIZES:
                raise ParseError(f"unsupported PLY property type {typ!r}")
            offsets[name] = (stride, typ)
            stride += _PLY_SIZES[typ]
        for axis in ("x", "y", "z"):
            if axis not in offsets:
                raise ParseError(f"PLY vertex element lacks property {axis!r}")
            if offsets[axis][1] not in ("float", "float32"):
                raise ParseError(f"property {axis!r} must be float32")
        raw = fh.read(n_vertex * stride)
        if len(raw) != n_vertex * stride:
            raise ParseError(
                f"PLY payload truncated: expected {n_vertex * stride} bytes, got {len(raw)}"
            )
        buf = np.frombuffer(raw, dtype=np.uint8).reshape(n_vertex, stride)
        cols = []
        for axis in ("x", "y", "z"):
            off = offsets[axis][0]
            cols.append(buf[:, off:off + 4].copy().view("<f4")[:, 0])
        return np.stack(cols, axis=1).astype(np.float64)
