"""Procedural triangle meshes used by the demos and test fixtures.

These are deliberately simple closed surfaces with distinct curvature
profiles: a box (flat faces, sharp edges), an icosphere (uniform positive
curvature), a cylinder (mixed flat/curved), and a torus (positive and
negative curvature).
"""

from __future__ import annotations

import numpy as np

from .mesh import Mesh

__all__ = ["box", "icosphere", "cylinder", "torus"]


def box(size=(1.0, 1.0, 1.0)) -> Mesh:
    sx, sy, sz = size
    hx, hy, hz = sx / 2, sy / 2, sz / 2
    v = np.array([[x, y, z] for x in (-hx, hx) for y in (-hy, hy) for z in (-hz, hz)])
    quads = [
        (0, 1, 3, 2), (4, 6, 7, 5),  # x faces
        (0, 4, 5, 1), (2, 3, 7, 6),  # y faces
        (0, 2, 6, 4), (1, 5, 7, 3),  # z faces
    ]
    tris = []
    for a, b, c, d in quads:
        tris += [(a, b, c), (a, c, d)]
    return Mesh(v, np.asarray(tris))


def icosphere(subdivisions: int = 3, radius: float = 0.5) -> Mesh:
    """Icosahedron subdivided and projected onto a sphere."""
    phi = (1 + np.sqrt(5)) / 2
    base = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    base /= np.linalg.norm(base[0])
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ])
    verts = [tuple(p) for p in base]
    lookup = {p: i for i, p in enumerate(verts)}

    def midpoint(i, j):
        p = (np.asarray(verts[i]) + np.asarray(verts[j])) / 2
        p = tuple(p / np.linalg.norm(p))
        if p not in lookup:
            lookup[p] = len(verts)
            verts.append(p)
        return lookup[p]

    for _ in range(subdivisions):
        new_faces = []
        for a, b, c in faces:
            ab = midpoint(a, b)
            bc = midpoint(b, c)
            ca = midpoint(c, a)
            new_faces += [(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)]
        faces = np.asarray(new_faces)
    return Mesh(np.asarray(verts) * radius, faces)


def cylinder(radius: float = 0.4, height: float = 1.0, segments: int = 48) -> Mesh:
    ang = 2 * np.pi * np.arange(segments) / segments
    ring = np.stack([radius * np.cos(ang), radius * np.sin(ang)], axis=1)
    bottom = np.column_stack([ring, np.full(segments, -height / 2)])
    top = np.column_stack([ring, np.full(segments, height / 2)])
    centers = np.array([[0, 0, -height / 2], [0, 0, height / 2]])
    v = np.vstack([bottom, top, centers])
    cb, ct = 2 * segments, 2 * segments + 1
    tris = []
    for i in range(segments):
        j = (i + 1) % segments
        tris += [(i, j, segments + i), (j, segments + j, segments + i)]  # wall
        tris += [(cb, j, i), (ct, segments + i, segments + j)]           # caps
    return Mesh(v, np.asarray(tris))


def torus(major_radius: float = 0.4, minor_radius: float = 0.15,
          major_segments: int = 48, minor_segments: int = 24) -> Mesh:
    u = 2 * np.pi * np.arange(major_segments) / major_segments
    v = 2 * np.pi * np.arange(minor_segments) / minor_segments
    uu, vv = np.meshgrid(u, v, indexing="ij")
    x = (major_radius + minor_radius * np.cos(vv)) * np.cos(uu)
    y = (major_radius + minor_radius * np.cos(vv)) * np.sin(uu)
    z = minor_radius * np.sin(vv)
    verts = np.stack([x.ravel(), y.ravel(), z.ravel()], axis=1)
    tris = []
    for i in range(major_segments):
        for j in range(minor_segments):
            a = i * minor_segments + j
            b = ((i + 1) % major_segments) * minor_segments + j
            c = i * minor_segments + (j + 1) % minor_segments
            d = ((i + 1) % major_segments) * minor_segments + (j + 1) % minor_segments
            tris += [(a, b, c), (b, d, c)]
    return Mesh(verts, np.asarray(tris))
