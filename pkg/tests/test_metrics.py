import json

import numpy as np
import pytest

from cloudclean.cloud import PointCloud
from cloudclean.metrics import (MetricReport, chamfer_measure, distance_colors,
                                distances_to_reference, f_beta, normalized_pair, rmsd)


def brute_chamfer(a, b):
    fwd = np.mean([min(((p - q) ** 2).sum() for q in b) for p in a])
    bwd = np.mean([min(((q - p) ** 2).sum() for p in a) for q in b])
    return fwd + bwd


def brute_rmsd(a, b):
    return float(np.sqrt(np.mean([min(((p - q) ** 2).sum() for q in b) for p in a])))


class TestChamfer:
    def test_identical_clouds(self, rng):
        pts = rng.normal(size=(50, 3))
        assert chamfer_measure(pts, pts) == 0.0

    def test_single_point_pair(self):
        assert chamfer_measure([[0, 0, 0]], [[1, 0, 0]]) == pytest.approx(2.0)

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            a = rng.normal(size=(int(rng.integers(2, 200)), 3))
            b = rng.normal(size=(int(rng.integers(2, 200)), 3))
            assert chamfer_measure(a, b) == pytest.approx(brute_chamfer(a, b), rel=1e-12)

    def test_symmetric_for_equal_cardinalities(self, rng):
        for _ in range(10):
            a = rng.normal(size=(40, 3))
            b = rng.normal(size=(40, 3))
            assert chamfer_measure(a, b) == pytest.approx(chamfer_measure(b, a), rel=1e-12)

    def test_empty_cloud_rejected(self):
        with pytest.raises(ValueError):
            chamfer_measure(np.zeros((0, 3)), np.zeros((3, 3)))


class TestRmsd:
    def test_identical_clouds(self, rng):
        pts = rng.normal(size=(30, 3))
        assert rmsd(pts, pts) == 0.0

    def test_single_point_distance(self):
        assert rmsd([[0, 0, 2]], [[0, 0, 0]]) == pytest.approx(2.0)

    def test_matches_brute_force(self, rng):
        for _ in range(20):
            a = rng.normal(size=(int(rng.integers(2, 150)), 3))
            b = rng.normal(size=(int(rng.integers(2, 150)), 3))
            assert rmsd(a, b) == pytest.approx(brute_rmsd(a, b), rel=1e-12)


class TestFBeta:
    def test_perfect_prediction(self, rng):
        labels = rng.integers(0, 2, size=100)
        r = f_beta(labels, labels, beta=1.0)
        assert (r.score, r.precision, r.recall) == (1.0, 1.0, 1.0)
        assert f_beta(labels, labels, beta=2.0).score == 1.0

    def test_all_predicted_outlier_30_percent_true(self):
        true = np.zeros(1000, dtype=int)
        true[:300] = 1
        pred = np.ones(1000, dtype=int)
        r = f_beta(pred, true, beta=2.0)
        assert r.precision == pytest.approx(0.3)
        assert r.recall == 1.0
        assert r.score == pytest.approx(1.5 / 2.2, rel=1e-12)

    def test_half_precision_half_recall(self):
        # P = R = 0.5 -> F1 = 0.5
        true = np.array([1, 1, 0, 0])
        pred = np.array([1, 0, 1, 0])
        r = f_beta(pred, true, beta=1.0)
        assert (r.precision, r.recall) == (0.5, 0.5)
        assert r.score == pytest.approx(0.5)

    def test_zero_denominator_yields_zero(self):
        r = f_beta(np.zeros(5), np.zeros(5))
        assert r == (0.0, 0.0, 0.0)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError):
            f_beta([0, 1], [0, 1, 1])


def test_normalized_pair_unit_diagonal(rng):
    ref = PointCloud(rng.normal(size=(100, 3)) * 7)
    cleaned = PointCloud(ref.points + rng.normal(size=(100, 3)) * 0.01)
    a, b = normalized_pair(cleaned, ref)
    extent = b.max(axis=0) - b.min(axis=0)
    assert np.linalg.norm(extent) == pytest.approx(1.0, rel=1e-12)


def test_distances_to_reference_brute(rng):
    a = rng.normal(size=(30, 3))
    b = rng.normal(size=(40, 3))
    got = distances_to_reference(a, b)
    for i in range(30):
        expected = np.sqrt(((b - a[i]) ** 2).sum(axis=1)).min()
        assert got[i] == pytest.approx(expected, rel=1e-12)


class TestMetricReport:
    def test_json_roundtrip(self, tmp_path):
        report = MetricReport(chamfer=0.5, rmsd=0.25, precision=0.9, recall=0.8,
                              f1=0.847, f2=0.82, info={"noise_fraction": 0.01})
        path = tmp_path / "r.json"
        report.to_json(path)
        back = MetricReport.from_json(path.read_text())
        assert back == report

    def test_validation(self):
        with pytest.raises(ValueError):
            MetricReport(chamfer=-1.0, rmsd=0.0)
        with pytest.raises(ValueError):
            MetricReport(chamfer=0.0, rmsd=0.0, f1=1.5)

    def test_stable_key_order(self, tmp_path):
        text = MetricReport(chamfer=0.0, rmsd=0.0).to_json()
        doc = json.loads(text)
        assert list(doc) == sorted(doc)


def test_distance_colors_ramp():
    colors = distance_colors([0.0, 0.5, 1.0, 2.0], max_distance=1.0)
    np.testing.assert_array_equal(colors[0], [0, 0, 255])    # blue at zero
    np.testing.assert_array_equal(colors[2], [255, 0, 0])    # red at max
    np.testing.assert_array_equal(colors[3], [255, 0, 0])    # clipped
    assert colors[1].tolist() == [128, 0, 128]
