"""Static plot and summary-table emission from run artifacts.

Consumes the JSON/CSV artifacts the other subcommands write (metric reports,
training curves, cleaning traces) and renders matplotlib figures plus a
Markdown summary table. Purely a presentation layer: every number comes
straight out of the input files.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .errors import DataMismatchError
from .metrics import MetricReport

__all__ = ["classify_artifact", "render_report"]


def classify_artifact(path) -> str:
    """One of 'metrics', 'curves', 'trace' based on file content."""
    path = Path(path)
    if path.suffix == ".csv":
        header = path.open().readline().strip()
        if header != "epoch,train_loss,val_metric":
            raise DataMismatchError(f"{path} is not a training-curve CSV")
        return "curves"
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataMismatchError(f"{path} is not valid JSON") from exc
    if "chamfer" in doc and "rmsd" in doc:
        return "metrics"
    if "iterations" in doc and "input_count" in doc:
        return "trace"
    raise DataMismatchError(f"{path} matches no known artifact schema")


def _load_curves(path) -> list[dict]:
    with open(path) as fh:
        return list(csv.DictReader(fh))


def _plot_curves(path: Path, out_dir: Path, written: list):
    rows = _load_curves(path)
    epochs = [int(r["epoch"]) for r in rows]
    losses = [float(r["train_loss"]) for r in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(epochs, losses, marker="o", label="train loss")
    vals = [(int(r["epoch"]), float(r["val_metric"])) for r in rows if r["val_metric"]]
    if vals:
        ax2 = ax.twinx()
        ax2.plot(*zip(*vals), marker="s", color="tab:orange", label="validation")
        ax2.set_ylabel("validation metric")
    ax.set_xlabel("epoch")
    ax.set_ylabel("mean training loss")
    ax.set_title(path.stem)
    fig.tight_layout()
    out = out_dir / f"{path.stem}_loss_curve.svg"
    fig.savefig(out)
    plt.close(fig)
    written.append(out)


def _plot_metrics(reports: list[tuple[Path, MetricReport]], out_dir: Path, written: list):
    def noise_of(item):
        return item[1].info.get("noise_fraction")

    with_noise = [r for r in reports if noise_of(r) is not None]
    series = sorted(with_noise, key=noise_of) if len(with_noise) == len(reports) \
        else reports
    xs = [noise_of(r) if noise_of(r) is not None else i for i, r in enumerate(series)]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(xs, [r[1].chamfer for r in series], marker="o", label="chamfer")
    ax.plot(xs, [r[1].rmsd for r in series], marker="s", label="rmsd")
    ax.set_xlabel("noise fraction" if len(with_noise) == len(reports) else "report index")
    ax.set_ylabel("metric value")
    ax.legend()
    ax.set_title("metrics vs noise level")
    fig.tight_layout()
    out = out_dir / "metrics_vs_noise.svg"
    fig.savefig(out)
    plt.close(fig)
    written.append(out)


def _plot_trace(path: Path, doc: dict, out_dir: Path, written: list):
    iters = doc["iterations"]
    chamfers = [(it["iteration"], it["chamfer"]) for it in iters if "chamfer" in it]
    fig, ax = plt.subplots(figsize=(6, 4))
    if chamfers:
        ax.plot(*zip(*chamfers), marker="o", label="chamfer")
        ax.set_ylabel("chamfer")
    else:
        ax.plot([it["iteration"] for it in iters],
                [it["mean_displacement"] for it in iters], marker="o",
                label="mean displacement")
        ax.set_ylabel("mean displacement")
    ax.set_xlabel("iteration")
    ax.legend()
    ax.set_title(path.stem)
    fig.tight_layout()
    out = out_dir / f"{path.stem}_iterations.svg"
    fig.savefig(out)
    plt.close(fig)
    written.append(out)


def _summary_table(reports: list[tuple[Path, MetricReport]]) -> str:
    lines = ["| report | chamfer | rmsd | f1 | f2 |",
             "|---|---|---|---|---|"]
    for path, rep in reports:
        f1 = "" if rep.f1 is None else f"{rep.f1:.6g}"
        f2 = "" if rep.f2 is None else f"{rep.f2:.6g}"
        lines.append(f"| {path.name} | {rep.chamfer:.6g} | {rep.rmsd:.6g} | {f1} | {f2} |")
    total_c = sum(r.chamfer for _, r in reports)
    total_r = sum(r.rmsd for _, r in reports)
    lines.append(f"| total | {total_c:.6g} | {total_r:.6g} |  |  |")
    return "\n".join(lines) + "\n"


def render_report(inputs, out_dir) -> list[Path]:
    """Render every recognized artifact; returns the written file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    reports = []
    for raw in inputs:
        path = Path(raw)
        kind = classify_artifact(path)
        if kind == "curves":
            _plot_curves(path, out_dir, written)
        elif kind == "metrics":
            reports.append((path, MetricReport.from_json(path.read_text())))
        else:
            _plot_trace(path, json.loads(path.read_text()), out_dir, written)
    if reports:
        _plot_metrics(reports, out_dir, written)
        summary = out_dir / "summary.md"
        summary.write_text("# Evaluation summary\n\n" + _summary_table(reports))
        written.append(summary)
    return written
