import numpy as np
import pytest
import torch

from cloudclean.cloud import PointCloud, SpatialIndex, bbox_diagonal
from cloudclean.errors import EmptyCloudError, StructuralError
from cloudclean.model import PatchNet
from cloudclean.pipeline import (CleaningConfig, DisplacementField, clean,
                                 denoise_once, inflate, remove_outliers)

from conftest import randomize_net, tiny_model_config


def constant_logit_net(logit: float, m=16) -> PatchNet:
    net = PatchNet(tiny_model_config(output_dim=1, m=m))
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
        net.head.bias.fill_(logit)
    return net


def zero_displacement_net(m=16) -> PatchNet:
    net = PatchNet(tiny_model_config(output_dim=3, m=m))
    with torch.no_grad():
        for p in net.parameters():
            p.zero_()
    return net


def brute_inflate(vectors, points, k):
    n = len(points)
    out = np.zeros_like(vectors)
    for i in range(n):
        d = np.linalg.norm(points - points[i], axis=1)
        d[i] = np.inf  # self excluded
        neighbors = np.argsort(d, kind="stable")[:k]
        out[i] = vectors[i] - vectors[neighbors].mean(axis=0)
    return out


class TestInflate:
    def test_constant_field_cancels_exactly(self, rng):
        for k in (1, 10, 100):
            pts = rng.normal(size=(150, 3))
            cloud = PointCloud(pts)
            field = DisplacementField(np.tile([0.1, -0.7, 0.3], (150, 1)))
            out = inflate(field, cloud, k)
            assert (out.vectors == 0).all()

    def test_two_point_self_exclusion(self):
        cloud = PointCloud([[0, 0, 0], [1, 0, 0]])
        d1, d2 = np.array([0.2, 0.0, 0.1]), np.array([-0.4, 0.5, 0.0])
        out = inflate(DisplacementField(np.stack([d1, d2])), cloud, k=1)
        np.testing.assert_allclose(out.vectors[0], d1 - d2, atol=1e-15)
        np.testing.assert_allclose(out.vectors[1], d2 - d1, atol=1e-15)

    def test_matches_brute_force(self, rng):
        for _ in range(10):
            n = int(rng.integers(20, 150))
            k = int(rng.integers(1, 15))
            pts = rng.normal(size=(n, 3))
            vectors = rng.normal(size=(n, 3))
            got = inflate(DisplacementField(vectors), PointCloud(pts), k)
            expected = brute_inflate(vectors, pts, k)
            np.testing.assert_allclose(got.vectors, expected, rtol=1e-10, atol=1e-10)

    def test_oversized_k_clamps_with_warning(self, rng):
        cloud = PointCloud(rng.normal(size=(5, 3)))
        field = DisplacementField(rng.normal(size=(5, 3)))
        with pytest.warns(UserWarning, match="clamped"):
            out = inflate(field, cloud, k=50)
        expected = inflate(field, cloud, k=4)
        np.testing.assert_array_equal(out.vectors, expected.vectors)

    def test_field_cloud_mismatch(self, rng):
        with pytest.raises(StructuralError):
            inflate(DisplacementField(rng.normal(size=(4, 3))),
                    PointCloud(rng.normal(size=(5, 3))), 2)


class TestRemoveOutliers:
    def test_constant_negative_logit_removes_nothing(self, rng):
        cloud = PointCloud(rng.normal(size=(60, 3)))
        kept, labels = remove_outliers(cloud, constant_logit_net(-10.0),
                                       CleaningConfig())
        assert len(kept) == 60
        assert labels.sum() == 0

    def test_constant_positive_logit_refuses_empty_cloud(self, rng):
        cloud = PointCloud(rng.normal(size=(60, 3)))
        with pytest.raises(EmptyCloudError):
            remove_outliers(cloud, constant_logit_net(10.0), CleaningConfig())

    def test_zero_logit_keeps_everything_strict_threshold(self, rng):
        # probability exactly 0.5 is NOT > 0.5
        cloud = PointCloud(rng.normal(size=(30, 3)))
        kept, labels = remove_outliers(cloud, constant_logit_net(0.0),
                                       CleaningConfig())
        assert len(kept) == 30

    def test_wrong_head_rejected(self, rng):
        cloud = PointCloud(rng.normal(size=(10, 3)))
        with pytest.raises(StructuralError):
            remove_outliers(cloud, zero_displacement_net(), CleaningConfig())


class TestDenoiseOnce:
    def test_zero_net_zero_field(self, rng):
        cloud = PointCloud(rng.normal(size=(40, 3)))
        field = denoise_once(cloud, zero_displacement_net(), CleaningConfig())
        assert (field.vectors == 0).all()
        assert len(field) == 40

    def test_single_point_cloud_finite(self):
        cloud = PointCloud([[1.0, 2.0, 3.0]])
        net = randomize_net(PatchNet(tiny_model_config(output_dim=3, m=16)),
                            seed=1, scale=0.1)
        with pytest.warns(UserWarning):
            # degenerate diagonal: explicit patch radius keeps it usable
            field = denoise_once(cloud, net, CleaningConfig(), patch_radius=1.0)
            out = inflate(field, cloud, 1)
        assert np.isfinite(field.vectors).all()
        np.testing.assert_array_equal(out.vectors, field.vectors)

    def test_matches_pointwise_prediction(self, rng):
        from cloudclean.model import predict_displacement
        from cloudclean.patches import extract_patch
        cloud = PointCloud(rng.normal(size=(80, 3)))
        net = randomize_net(PatchNet(tiny_model_config(output_dim=3, m=16)),
                            seed=2, scale=0.1).eval()
        config = CleaningConfig(patch_seed=11)
        field = denoise_once(cloud, net, config)
        index = SpatialIndex(cloud)
        r = 0.05 * bbox_diagonal(cloud)
        for i in (0, 13, 79):
            patch = extract_patch(cloud, index, i, r, 16, seed=11)
            np.testing.assert_allclose(field.vectors[i],
                                       predict_displacement(patch, net),
                                       rtol=1e-5, atol=1e-8)


class TestClean:
    def test_zero_iterations_only_filters(self, rng):
        cloud = PointCloud(rng.normal(size=(50, 3)))
        config = CleaningConfig(iterations=0)
        out, trace = clean(cloud, constant_logit_net(-10.0), None, config)
        assert len(out) == 50
        assert trace.iterations == []
        assert trace.outlier_stage_ran

    def test_identity_pipeline(self, rng):
        cloud = PointCloud(rng.normal(size=(50, 3)))
        out, trace = clean(cloud, constant_logit_net(-10.0),
                           zero_displacement_net(),
                           CleaningConfig(iterations=2, inflation_k=10))
        np.testing.assert_array_equal(out.points, cloud.points)
        assert trace.outliers_removed == 0

    def test_point_count_preserved_through_denoise(self, rng):
        cloud = PointCloud(rng.normal(size=(70, 3)))
        net = randomize_net(PatchNet(tiny_model_config(output_dim=3, m=16)),
                            seed=3, scale=0.05)
        config = CleaningConfig(iterations=3, inflation_k=5)
        out, trace = clean(cloud, None, net, config, skip_outliers=True)
        assert len(out) == 70
        assert len(trace.iterations) == 3

    def test_deterministic(self, rng):
        cloud = PointCloud(rng.normal(size=(60, 3)))
        net = randomize_net(PatchNet(tiny_model_config(output_dim=3, m=16)),
                            seed=4, scale=0.05)
        config = CleaningConfig(iterations=2, inflation_k=8, patch_seed=3)
        a, _ = clean(cloud, None, net, config, skip_outliers=True)
        b, _ = clean(cloud, None, net, config, skip_outliers=True)
        np.testing.assert_array_equal(a.points, b.points)

    def test_iteration_hook_sees_every_step(self, rng):
        cloud = PointCloud(rng.normal(size=(30, 3)))
        net = zero_displacement_net()
        seen = []
        clean(cloud, None, net, CleaningConfig(iterations=3, inflation_k=2),
              skip_outliers=True, iteration_hook=lambda i, c: seen.append((i, len(c))))
        assert seen == [(1, 30), (2, 30), (3, 30)]

    def test_missing_denoise_net_rejected(self, rng):
        cloud = PointCloud(rng.normal(size=(10, 3)))
        with pytest.raises(StructuralError):
            clean(cloud, None, None, CleaningConfig(iterations=1), skip_outliers=True)

    def test_reference_adds_chamfer_to_trace(self, rng):
        cloud = PointCloud(rng.normal(size=(40, 3)))
        net = zero_displacement_net()
        _, trace = clean(cloud, None, net, CleaningConfig(iterations=1, inflation_k=3),
                         skip_outliers=True, reference=cloud)
        assert trace.iterations[0]["chamfer"] == 0.0
        text = trace.to_json()
        assert "chamfer" in text
