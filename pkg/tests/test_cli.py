import json
import subprocess
import sys

import numpy as np
import pytest

from cloudclean.cli import main
from cloudclean.mesh import save_obj
from cloudclean.metrics import MetricReport, chamfer_measure, normalized_pair, rmsd
from cloudclean.pcio import load_cloud
from cloudclean.shapes import box, icosphere

MODEL_KEYS = """
m = 24
point_feature_widths = 6, 6, 10
feature_stn_dim = 6
feature_stn_after = 2
regressor_widths = 8,
qstn_widths = 6, 8
qstn_fc_widths = 6,
stn_widths = 6, 8
stn_fc_widths = 6,
"""


@pytest.fixture(scope="module")
def mesh_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("meshes")
    save_obj(box(), root / "box.obj")
    save_obj(icosphere(1), root / "sphere.obj")
    return root


@pytest.fixture(scope="module")
def dataset(tmp_path_factory, mesh_dir):
    root = tmp_path_factory.mktemp("data")
    cfg = root / "gen.cfg"
    cfg.write_text("task = denoise\nsplit = train\npoints_per_cloud = 400\n"
                   "noise_fractions = 0, 0.01\n")
    out = root / "train"
    code = main(["generate-data", "--config", str(cfg), "--input", str(mesh_dir),
                 "--output", str(out), "--seed", "3"])
    assert code == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    root = tmp_path_factory.mktemp("run")
    cfg = root / "train.cfg"
    cfg.write_text("head = denoise\nloss = combined\nepochs = 2\nbatch_size = 32\n"
                   "patches_per_shape_per_epoch = 48\nlearning_rate = 0.0005\n"
                   "optimizer = adam\ninit_scheme = kaiming-uniform\n" + MODEL_KEYS)
    out = root / "out"
    code = main(["train", "--config", str(cfg), "--input",
                 str(dataset / "manifest.json"), "--output", str(out),
                 "--seed", "5", "--threads", "1"])
    assert code == 0
    return out


class TestGenerateData:
    def test_counts_and_manifest(self, dataset):
        manifest = json.loads((dataset / "manifest.json").read_text())
        # 2 shapes x 2 noise levels
        assert len(manifest["entries"]) == 4
        clouds = list(dataset.glob("*.xyz"))
        assert len(clouds) == 2 + 4  # clean + noisy per shape/level

    def test_empty_mesh_dir_exits_2(self, tmp_path):
        empty = tmp_path / "empty"
        empty.mkdir()
        code = main(["generate-data", "--input", str(empty),
                     "--output", str(tmp_path / "out")])
        assert code == 2

    def test_default_denoise_levels_one_mesh(self, tmp_path):
        meshes = tmp_path / "meshes"
        meshes.mkdir()
        save_obj(box(), meshes / "box.obj")
        cfg = tmp_path / "gen.cfg"
        cfg.write_text("points_per_cloud = 120\n")  # default 6 noise levels
        out = tmp_path / "out"
        assert main(["generate-data", "--config", str(cfg), "--input",
                     str(meshes), "--output", str(out)]) == 0
        noisy = [p for p in out.glob("*.xyz") if "noise" in p.name]
        assert len(noisy) == 6
        assert (out / "box.clean.xyz").exists()
        assert (out / "manifest.json").exists()

    def test_rerun_is_byte_identical(self, mesh_dir, tmp_path):
        cfg = tmp_path / "gen.cfg"
        cfg.write_text("task = denoise\npoints_per_cloud = 100\n"
                       "noise_fractions = 0.01,\n")
        for name in ("a", "b"):
            assert main(["generate-data", "--config", str(cfg), "--input",
                         str(mesh_dir), "--output", str(tmp_path / name),
                         "--seed", "9"]) == 0
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()


class TestTrain:
    def test_outputs(self, trained):
        assert (trained / "checkpoint_final.ckpt").exists()
        csv_lines = (trained / "curves.csv").read_text().strip().splitlines()
        assert csv_lines[0] == "epoch,train_loss,val_metric"
        assert len(csv_lines) == 3


class TestClean:
    def test_clean_and_trace(self, dataset, trained, tmp_path):
        cfg = tmp_path / "clean.cfg"
        cfg.write_text(f"denoise_model = {trained / 'checkpoint_final.ckpt'}\n"
                       "iterations = 1\ninflation_k = 10\n")
        noisy = dataset / "box.noise0.01.xyz"
        out = tmp_path / "cleaned.xyz"
        code = main(["clean", "--config", str(cfg), "--input", str(noisy),
                     "--output", str(out), "--skip-outliers",
                     "--reference", str(dataset / "box.clean.xyz")])
        assert code == 0
        cleaned = load_cloud(out)
        assert len(cleaned) == 400
        trace = json.loads(out.with_suffix(".trace.json").read_text())
        assert len(trace["iterations"]) == 1
        assert "chamfer" in trace["iterations"][0]

    def test_iterations_zero_without_models_needs_no_denoiser(self, dataset, tmp_path):
        out = tmp_path / "copy.xyz"
        code = main(["clean", "--input", str(dataset / "box.clean.xyz"),
                     "--output", str(out), "--skip-outliers", "--iterations", "0"])
        assert code == 0
        assert len(load_cloud(out)) == 400

    def test_save_intermediates(self, dataset, trained, tmp_path):
        cfg = tmp_path / "clean.cfg"
        cfg.write_text(f"denoise_model = {trained / 'checkpoint_final.ckpt'}\n"
                       "iterations = 2\ninflation_k = 10\n"
                       "save_intermediates = true\n")
        out = tmp_path / "cleaned.xyz"
        assert main(["clean", "--config", str(cfg),
                     "--input", str(dataset / "box.noise0.01.xyz"),
                     "--output", str(out), "--skip-outliers"]) == 0
        assert (tmp_path / "cleaned.iter1.xyz").exists()
        assert (tmp_path / "cleaned.iter2.xyz").exists()
        assert load_cloud(tmp_path / "cleaned.iter2.xyz").points.shape == \
            load_cloud(out).points.shape

    def test_bad_checkpoint_exits_4(self, dataset, tmp_path):
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"garbage")
        cfg = tmp_path / "clean.cfg"
        cfg.write_text(f"denoise_model = {bad}\n")
        code = main(["clean", "--config", str(cfg),
                     "--input", str(dataset / "box.clean.xyz"),
                     "--output", str(tmp_path / "o.xyz"), "--skip-outliers"])
        assert code == 4

    def test_trace_chamfer_matches_evaluate(self, dataset, trained, tmp_path):
        cfg = tmp_path / "clean.cfg"
        cfg.write_text(f"denoise_model = {trained / 'checkpoint_final.ckpt'}\n"
                       "iterations = 1\ninflation_k = 10\n")
        noisy = dataset / "sphere.noise0.01.xyz"
        gt = dataset / "sphere.clean.xyz"
        out = tmp_path / "cleaned.xyz"
        assert main(["clean", "--config", str(cfg), "--input", str(noisy),
                     "--output", str(out), "--skip-outliers",
                     "--reference", str(gt)]) == 0
        assert main(["evaluate", "--input", str(out), "--reference", str(gt),
                     "--output", str(tmp_path / "report.json")]) == 0
        trace = json.loads(out.with_suffix(".trace.json").read_text())
        report = json.loads((tmp_path / "report.json").read_text())
        assert trace["iterations"][-1]["chamfer"] == \
            pytest.approx(report["chamfer"], rel=1e-6)


class TestEvaluate:
    def test_identical_clouds_zero_metrics(self, dataset, tmp_path):
        gt = dataset / "box.clean.xyz"
        out = tmp_path / "report.json"
        assert main(["evaluate", "--input", str(gt), "--reference", str(gt),
                     "--output", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["chamfer"] == 0.0
        assert report["rmsd"] == 0.0
        assert report["f1"] is None  # no labels available

    def test_matches_library_calls(self, dataset, tmp_path):
        cleaned = load_cloud(dataset / "box.noise0.01.xyz")
        gt = load_cloud(dataset / "box.clean.xyz")
        out = tmp_path / "report.json"
        assert main(["evaluate", "--input", str(dataset / "box.noise0.01.xyz"),
                     "--reference", str(dataset / "box.clean.xyz"),
                     "--output", str(out)]) == 0
        report = MetricReport.from_json(out.read_text())
        a, b = normalized_pair(cleaned, gt)
        assert report.chamfer == pytest.approx(chamfer_measure(a, b), rel=1e-12)
        assert report.rmsd == pytest.approx(rmsd(a, b), rel=1e-12)

    def test_label_scores_and_mismatch(self, dataset, tmp_path):
        predicted = tmp_path / "pred.outliers"
        truth = tmp_path / "true.outliers"
        predicted.write_text("1\n0\n1\n0\n")
        truth.write_text("1\n0\n0\n0\n")
        cfg = tmp_path / "eval.cfg"
        cfg.write_text(f"predicted_labels = {predicted}\ntrue_labels = {truth}\n"
                       "noise_fraction = 0.01\n")
        gt = dataset / "box.clean.xyz"
        out = tmp_path / "report.json"
        assert main(["evaluate", "--config", str(cfg), "--input", str(gt),
                     "--reference", str(gt), "--output", str(out)]) == 0
        report = json.loads(out.read_text())
        assert report["precision"] == 0.5
        assert report["recall"] == 1.0
        assert report["info"]["noise_fraction"] == 0.01
        truth.write_text("1\n0\n0\n")
        assert main(["evaluate", "--config", str(cfg), "--input", str(gt),
                     "--reference", str(gt), "--output", str(out)]) == 5

    def test_missing_input_exits_3(self, dataset, tmp_path):
        code = main(["evaluate", "--input", str(tmp_path / "nope.xyz"),
                     "--reference", str(dataset / "box.clean.xyz"),
                     "--output", str(tmp_path / "r.json")])
        assert code == 3

    def test_color_ply_export(self, dataset, tmp_path):
        ply = tmp_path / "colored.ply"
        cfg = tmp_path / "eval.cfg"
        cfg.write_text(f"color_ply = {ply}\ncolor_max = 0.01\n")
        assert main(["evaluate", "--config", str(cfg),
                     "--input", str(dataset / "box.noise0.01.xyz"),
                     "--reference", str(dataset / "box.clean.xyz"),
                     "--output", str(tmp_path / "r.json")]) == 0
        assert ply.exists()
        assert b"property uchar red" in ply.read_bytes()[:300]


class TestReport:
    def test_renders_plots_and_summary(self, dataset, trained, tmp_path):
        reports = []
        for i, noise in enumerate((0.0, 0.01)):
            path = tmp_path / f"r{i}.json"
            MetricReport(chamfer=0.1 * (i + 1), rmsd=0.2 * (i + 1),
                         info={"noise_fraction": noise}).to_json(path)
            reports.append(path)
        out = tmp_path / "plots"
        code = main(["report", "--input", str(trained / "curves.csv"),
                     *map(str, reports), "--output", str(out)])
        assert code == 0
        assert (out / "metrics_vs_noise.svg").exists()
        assert (out / "curves_loss_curve.svg").exists()
        summary = (out / "summary.md").read_text()
        total_line = [l for l in summary.splitlines() if "total" in l][0]
        assert f"{0.1 + 0.2:.6g}" in total_line  # chamfer column sums
        assert f"{0.2 + 0.4:.6g}" in total_line

    def test_schema_mismatch_exits_5(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text('{"something": 1}')
        code = main(["report", "--input", str(bad), "--output", str(tmp_path / "o")])
        assert code == 5


def test_console_entry_point_runs():
    proc = subprocess.run([sys.executable, "-m", "cloudclean.cli", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
