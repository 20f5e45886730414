import json

import pytest

from cloudclean.errors import DataMismatchError
from cloudclean.metrics import MetricReport
from cloudclean.report import classify_artifact, render_report


@pytest.fixture
def artifacts(tmp_path):
    curves = tmp_path / "curves.csv"
    curves.write_text("epoch,train_loss,val_metric\n1,0.5,\n2,0.25,\n3,0.2,\n")
    reports = []
    for i, noise in enumerate((0.0, 0.0025, 0.005)):
        path = tmp_path / f"report{i}.json"
        MetricReport(chamfer=0.01 * (i + 1), rmsd=0.1 * (i + 1),
                     info={"noise_fraction": noise}).to_json(path)
        reports.append(path)
    trace = tmp_path / "run.trace.json"
    trace.write_text(json.dumps({
        "schema_version": 1, "input_count": 100, "outlier_stage_ran": False,
        "outliers_removed": 0, "patch_radius": 0.05,
        "iterations": [{"iteration": 1, "chamfer": 0.4, "mean_displacement": 0.1,
                        "max_displacement": 0.3, "bbox_diagonal": 1.0},
                       {"iteration": 2, "chamfer": 0.3, "mean_displacement": 0.05,
                        "max_displacement": 0.2, "bbox_diagonal": 0.99}]}))
    return curves, reports, trace


def test_classify_artifact(artifacts):
    curves, reports, trace = artifacts
    assert classify_artifact(curves) == "curves"
    assert classify_artifact(reports[0]) == "metrics"
    assert classify_artifact(trace) == "trace"


def test_classify_rejects_unknown(tmp_path):
    bad = tmp_path / "x.json"
    bad.write_text('{"foo": 1}')
    with pytest.raises(DataMismatchError):
        classify_artifact(bad)
    bad_csv = tmp_path / "x.csv"
    bad_csv.write_text("a,b\n1,2\n")
    with pytest.raises(DataMismatchError):
        classify_artifact(bad_csv)


def test_render_all_artifact_kinds(artifacts, tmp_path):
    curves, reports, trace = artifacts
    out = tmp_path / "plots"
    written = render_report([curves, *reports, trace], out)
    names = {p.name for p in written}
    assert "curves_loss_curve.svg" in names
    assert "metrics_vs_noise.svg" in names
    assert "run.trace_iterations.svg" in names
    assert "summary.md" in names


def test_metric_plot_has_one_point_per_report(artifacts, tmp_path):
    _, reports, _ = artifacts
    out = tmp_path / "plots"
    render_report(reports, out)
    svg = (out / "metrics_vs_noise.svg").read_text()
    assert "chamfer" in svg and "rmsd" in svg


def test_summary_totals_equal_field_sums(artifacts, tmp_path):
    _, reports, _ = artifacts
    out = tmp_path / "plots"
    render_report(reports, out)
    lines = (out / "summary.md").read_text().splitlines()
    total = [l for l in lines if l.startswith("| total")][0]
    cells = [c.strip() for c in total.split("|")[1:-1]]
    assert float(cells[1]) == pytest.approx(0.01 + 0.02 + 0.03)
    assert float(cells[2]) == pytest.approx(0.1 + 0.2 + 0.3)
