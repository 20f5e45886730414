"""Triangle meshes and area-uniform surface sampling.

Meshes exist here only as sampling sources for synthetic dataset generation.
The OBJ support is the minimal v/f subset (triangles only).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cloud import PointCloud
from .errors import GenerationError, ParseError

__all__ = ["Mesh", "load_obj", "save_obj", "sample_mesh", "triangle_areas"]


@dataclass(frozen=True)
class Mesh:
    vertices: np.ndarray   # (V, 3) float64
    triangles: np.ndarray  # (T, 3) int64 vertex indices

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        t = np.asarray(self.triangles, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError(f"vertices must have shape (V, 3), got {v.shape}")
        if t.ndim != 2 or t.shape[1] != 3:
            raise ValueError(f"triangles must have shape (T, 3), got {t.shape}")
        if t.size and (t.min() < 0 or t.max() >= len(v)):
            raise ValueError("triangle indices out of vertex range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        if not (triangle_areas(self) > 0).any():
            raise ValueError("mesh has no triangle with nonzero area")


def triangle_areas(mesh: Mesh) -> np.ndarray:
    a = mesh.vertices[mesh.triangles[:, 0]]
    b = mesh.vertices[mesh.triangles[:, 1]]
    c = mesh.vertices[mesh.triangles[:, 2]]
    return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


def load_obj(path) -> Mesh:
    """Parse the v/f subset of Wavefront OBJ; faces must be triangles."""
    vertices = []
    faces = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            tokens = line.split()
            if not tokens or tokens[0].startswith("#"):
                continue
            if tokens[0] == "v":
                if len(tokens) < 4:
                    raise ParseError("vertex line needs 3 coordinates", line=lineno)
                try:
                    vertices.append([float(t) for t in tokens[1:4]])
                except ValueError:
                    raise ParseError(f"non-numeric vertex in {line.strip()!r}",
                                     line=lineno) from None
            elif tokens[0] == "f":
                if len(tokens) != 4:
                    raise ParseError("only triangular faces are supported", line=lineno)
                try:
                    # accept v, v/vt, v/vt/vn, v//vn references
                    idx = [int(t.split("/")[0]) for t in tokens[1:4]]
                except ValueError:
                    raise ParseError(f"bad face reference in {line.strip()!r}",
                                     line=lineno) from None
                faces.append([j - 1 if j > 0 else len(vertices) + j for j in idx])
    if not vertices or not faces:
        raise ParseError(f"{path} contains no usable v/f data")
    return Mesh(np.asarray(vertices), np.asarray(faces))


def save_obj(mesh: Mesh, path) -> Path:
    path = Path(path)
    lines = [f"v {x} {y} {z}\n" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}\n" for a, b, c in mesh.triangles]
    path.write_text("".join(lines))
    return path


def sample_mesh(mesh: Mesh, n: int, seed: int) -> PointCloud:
    """Draw n points uniformly at random on the mesh surface.

    Triangles are chosen with probability proportional to area, then a point
    is placed by uniform barycentric sampling (the u+v>1 fold). Deterministic
    given the seed.
    """
    if n < 1:
        raise ValueError(f"sample count must be >= 1, got {n}")
    areas = triangle_areas(mesh)
    total = areas.sum()
    if total <= 0:
        raise GenerationError("mesh has zero total surface area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=n, p=areas / total)
    u = rng.random(n)
    v = rng.random(n)
    fold = u + v > 1
    u[fold] = 1.0 - u[fold]
    v[fold] = 1.0 - v[fold]
    a = mesh.vertices[mesh.triangles[tri, 0]]
    b = mesh.vertices[mesh.triangles[tri, 1]]
    c = mesh.vertices[mesh.triangles[tri, 2]]
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return PointCloud(pts)
