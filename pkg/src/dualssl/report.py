"""Comparison reports over completed runs: curves, final-accuracy table,
bar chart, and the underlying CSV. Every reported number is copied verbatim
from a metric stream file and annotated with its source path and step."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .config import CONFIG_FILE_NAME
from .trainer import MetricRecord, read_metrics

logger = logging.getLogger(__name__)


@dataclass
class RunSummary:
    name: str
    run_dir: Path
    metrics_path: Path
    records: list[MetricRecord]

    @property
    def final(self) -> MetricRecord:
        return self.records[-1]


def _run_name(run_dir: Path) -> str:
    return run_dir.name or str(run_dir)


def load_runs(run_dirs: list[str | Path]) -> list[RunSummary]:
    """Load each run's metric stream, warning and skipping on problems."""
    runs = []
    for raw in run_dirs:
        run_dir = Path(raw)
        metrics_path = run_dir / "metrics.jsonl"
        try:
            records = read_metrics(metrics_path)
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            logger.warning("skipping %s: unreadable metrics (%s)", run_dir, exc)
            continue
        if not records:
            logger.warning("skipping %s: empty metric stream", run_dir)
            continue
        runs.append(RunSummary(_run_name(run_dir), run_dir, metrics_path, records))
    return runs


def _curve(ax, runs: list[RunSummary], fields: list[str], ylabel: str):
    for run in runs:
        for fld in fields:
            xs = [r.epoch for r in run.records if getattr(r, fld) is not None]
            ys = [getattr(r, fld) for r in run.records if getattr(r, fld) is not None]
            if xs:
                label = run.name if len(fields) == 1 else f"{run.name} ({fld})"
                ax.plot(xs, ys, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel(ylabel)
    if runs:
        ax.legend(fontsize=7)


_TABLE_FIELDS = ("top1_T", "top1_C", "top1_combined", "coverage", "pseudo_label_accuracy")


def _fmt(value) -> str:
    # verbatim JSON scalar text so table cells match the metric stream bytes
    return json.dumps(value)


def write_report(run_dirs: list[str | Path], out_dir: str | Path) -> Path:
    """Produce plots, CSV and a markdown summary; returns the summary path."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    runs = load_runs(run_dirs)
    if not runs:
        raise FileNotFoundError("no readable runs to report on")

    fig, axes = plt.subplots(1, 3, figsize=(15, 4))
    _curve(axes[0], runs, ["top1_combined"], "top-1 accuracy (%)")
    axes[0].set_title("combined accuracy")
    _curve(axes[1], runs, ["coverage"], "pseudo-label coverage")
    axes[1].set_title("coverage")
    _curve(axes[2], runs, ["pseudo_label_accuracy"], "pseudo-label accuracy")
    axes[2].set_title("pseudo-label accuracy")
    fig.tight_layout()
    fig.savefig(out / "curves.png", dpi=120)
    plt.close(fig)

    if len(runs) >= 2:
        fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(runs), 4))
        names = [r.name for r in runs]
        finals = [r.final.top1_combined or 0.0 for r in runs]
        ax.bar(names, finals)
        ax.set_ylabel("final top-1 combined (%)")
        ax.tick_params(axis="x", rotation=30)
        fig.tight_layout()
        fig.savefig(out / "final_comparison.png", dpi=120)
        plt.close(fig)

    csv_lines = ["run,metrics_path,step," + ",".join(_TABLE_FIELDS)]
    for run in runs:
        cells = [run.name, str(run.metrics_path), str(run.final.step)]
        cells += [_fmt(getattr(run.final, f)) for f in _TABLE_FIELDS]
        csv_lines.append(",".join(cells))
    (out / "final_metrics.csv").write_text("\n".join(csv_lines) + "\n")

    lines = ["# Run comparison", ""]
    baseline = runs[0].final.top1_combined
    header = "| run | source (path @ step) | " + " | ".join(_TABLE_FIELDS)
    if len(runs) >= 2:
        header += " | delta_combined_vs_first"
    lines.append(header + " |")
    lines.append("|" + "---|" * (header.count("|") + 1))
    for run in runs:
        row = [
            run.name,
            f"{run.metrics_path} @ {run.final.step}",
            *[_fmt(getattr(run.final, f)) for f in _TABLE_FIELDS],
        ]
        if len(runs) >= 2:
            if baseline is not None and run.final.top1_combined is not None:
                row.append(f"{run.final.top1_combined - baseline:+.2f}")
            else:
                row.append("n/a")
        lines.append("| " + " | ".join(row) + " |")
    lines += ["", f"Plots: curves.png" + (", final_comparison.png" if len(runs) >= 2 else "")]
    for run in runs:
        cfg = run.run_dir / CONFIG_FILE_NAME
        if cfg.exists():
            lines.append(f"- `{run.name}` config: {cfg}")
    summary = out / "report.md"
    summary.write_text("\n".join(lines) + "\n")
    return summary
