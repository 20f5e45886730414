import numpy as np
import pytest

from cloudclean.errors import GenerationError, ParseError
from cloudclean.mesh import Mesh, load_obj, sample_mesh, save_obj, triangle_areas
from cloudclean.shapes import box, cylinder, icosphere, torus


def barycentric(p, a, b, c):
    v0, v1, v2 = b - a, c - a, p - a
    d00, d01, d11 = v0 @ v0, v0 @ v1, v1 @ v1
    d20, d21 = v2 @ v0, v2 @ v1
    denom = d00 * d11 - d01 * d01
    v = (d11 * d20 - d01 * d21) / denom
    w = (d00 * d21 - d01 * d20) / denom
    return np.array([1 - v - w, v, w])


def test_single_triangle_samples_stay_inside():
    tri = Mesh([[0, 0, 0], [2, 0, 0], [0, 3, 0]], [[0, 1, 2]])
    cloud = sample_mesh(tri, 500, seed=1)
    a, b, c = tri.vertices
    for p in cloud.points:
        bary = barycentric(p, a, b, c)
        assert (bary >= -1e-12).all()
        assert bary.sum() == pytest.approx(1.0, abs=1e-12)
        assert p[2] == 0.0


def test_area_weighted_triangle_choice():
    # area ratio 4:1 → expected counts 40000:10000 within 3 sigma
    mesh = Mesh([[0, 0, 0], [4, 0, 0], [0, 2, 0], [10, 0, 0], [11, 0, 0], [10, 1, 0]],
                [[0, 1, 2], [3, 4, 5]])
    areas = triangle_areas(mesh)
    assert areas[0] / areas[1] == pytest.approx(8.0)  # 4.0 vs 0.5
    mesh2 = Mesh([[0, 0, 0], [4, 0, 0], [0, 2, 0], [10, 0, 0], [12, 0, 0], [10, 1, 0]],
                 [[0, 1, 2], [3, 4, 5]])
    areas2 = triangle_areas(mesh2)
    assert areas2[0] / areas2[1] == pytest.approx(4.0)
    cloud = sample_mesh(mesh2, 50_000, seed=7)
    in_first = np.sum(cloud.points[:, 0] < 8)
    sigma = np.sqrt(50_000 * 0.8 * 0.2)
    assert abs(in_first - 40_000) <= 3 * sigma


def test_sampling_deterministic():
    mesh = icosphere(1)
    a = sample_mesh(mesh, 1000, seed=3)
    b = sample_mesh(mesh, 1000, seed=3)
    np.testing.assert_array_equal(a.points, b.points)
    c = sample_mesh(mesh, 1000, seed=4)
    assert not np.array_equal(a.points, c.points)


def test_zero_area_mesh_raises():
    with pytest.raises(ValueError):
        Mesh([[0, 0, 0], [1, 0, 0], [2, 0, 0]], [[0, 1, 2]])  # collinear
    flat = Mesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
    object.__setattr__(flat, "vertices", flat.vertices * 0)
    with pytest.raises(GenerationError):
        sample_mesh(flat, 10, seed=0)


def test_obj_roundtrip(tmp_path):
    mesh = box((1.0, 2.0, 0.5))
    path = save_obj(mesh, tmp_path / "m.obj")
    back = load_obj(path)
    np.testing.assert_allclose(back.vertices, mesh.vertices)
    np.testing.assert_array_equal(back.triangles, mesh.triangles)


def test_obj_accepts_slash_face_references(tmp_path):
    path = tmp_path / "m.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1/1 2/2/2 3//3\n")
    mesh = load_obj(path)
    assert mesh.triangles.tolist() == [[0, 1, 2]]


def test_obj_rejects_quads(tmp_path):
    path = tmp_path / "m.obj"
    path.write_text("v 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1 2 3 4\n")
    with pytest.raises(ParseError, match="line 5"):
        load_obj(path)


def test_obj_rejects_bad_vertex(tmp_path):
    path = tmp_path / "m.obj"
    path.write_text("v 0 zero 0\nf 1 1 1\n")
    with pytest.raises(ParseError, match="line 1"):
        load_obj(path)


@pytest.mark.parametrize("mesh", [box(), icosphere(2), cylinder(), torus()],
                         ids=["box", "icosphere", "cylinder", "torus"])
def test_procedural_shapes_are_valid(mesh):
    assert (triangle_areas(mesh) > 0).all()
    assert mesh.triangles.min() >= 0
    assert mesh.triangles.max() < len(mesh.vertices)
