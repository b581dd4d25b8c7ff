"""Report emission: JSON, a flat per-task CSV, and matplotlib figures.

The CSV carries one row per task with the eight reported aggregates; the
figures show the metric trajectory across tasks, the per-class recall
history, and the per-class forgetting.
"""
from __future__ import annotations

import csv
import json
import os

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .cil import CilReport

CSV_COLUMNS = [
    "task_index",
    "Multiclass Acc.",
    "Macro Recall",
    "Weighted Recall",
    "Binary Acc.",
    "Binary FPR",
    "Binary Precision",
    "Binary Recall",
    "Binary F1-Score",
]

_METRIC_KEYS = [
    "multiclass_accuracy", "macro_recall", "weighted_recall", "binary_accuracy",
    "binary_fpr", "binary_precision", "binary_recall", "binary_f1",
]


def write_report(report: CilReport, out_dir, basename: str = "report",
                 figures: bool = True) -> dict[str, str]:
    """Write <basename>.json/.csv plus figures into out_dir; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths: dict[str, str] = {}

    json_path = os.path.join(out_dir, f"{basename}.json")
    with open(json_path, "w") as fh:
        json.dump(report.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    paths["json"] = json_path

    csv_path = os.path.join(out_dir, f"{basename}.csv")
    with open(csv_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for t in report.tasks:
            m = t.metrics.as_dict()
            writer.writerow([t.task_index] + [f"{m[k]:.6f}" for k in _METRIC_KEYS])
    paths["csv"] = csv_path

    if figures:
        paths.update(_write_figures(report, out_dir, basename))
    return paths


def _write_figures(report: CilReport, out_dir, basename: str) -> dict[str, str]:
    paths = {}
    tasks = report.tasks
    xs = [t.task_index for t in tasks]
    tick_labels = [f"{t.task_index}\n+{t.introduced_class}" for t in tasks]

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, label in [
        ("multiclass_accuracy", "Multiclass accuracy"),
        ("macro_recall", "Macro recall"),
        ("binary_accuracy", "Binary accuracy"),
        ("binary_fpr", "Binary FPR"),
    ]:
        ax.plot(xs, [t.metrics.as_dict()[key] for t in tasks], marker="o", label=label)
    ax.set_xlabel("Task (introduced class)")
    ax.set_ylabel("Metric")
    ax.set_xticks(xs)
    ax.set_xticklabels(tick_labels, fontsize=8)
    ax.set_ylim(-0.02, 1.02)
    ax.grid(alpha=0.3)
    ax.legend(loc="best", fontsize=8)
    ax.set_title("Detection metrics across incremental tasks")
    fig.tight_layout()
    path = os.path.join(out_dir, f"{basename}_metrics_over_tasks.png")
    fig.savefig(path, dpi=130)
    plt.close(fig)
    paths["fig_metrics"] = path

    class_names = [n for n in report.class_names
                   if any(n in t.per_class_recall for t in tasks)]
    if class_names:
        grid = np.full((len(tasks), len(class_names)), np.nan)
        for i, t in enumerate(tasks):
            for j, name in enumerate(class_names):
                if name in t.per_class_recall:
                    grid[i, j] = t.per_class_recall[name]
        fig, ax = plt.subplots(figsize=(1.2 + 0.7 * len(class_names), 1.2 + 0.55 * len(tasks)))
        masked = np.ma.masked_invalid(grid)
        im = ax.imshow(masked, vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(class_names)))
        ax.set_xticklabels(class_names, rotation=45, ha="right", fontsize=8)
        ax.set_yticks(range(len(tasks)))
        ax.set_yticklabels([f"task {t.task_index}" for t in tasks], fontsize=8)
        for i in range(len(tasks)):
            for j in range(len(class_names)):
                if not np.isnan(grid[i, j]):
                    ax.text(j, i, f"{grid[i, j]:.2f}", ha="center", va="center",
                            fontsize=7, color="white" if grid[i, j] < 0.6 else "black")
        fig.colorbar(im, ax=ax, label="Recall")
        ax.set_title("Per-class recall after each task")
        fig.tight_layout()
        path = os.path.join(out_dir, f"{basename}_per_class_recall.png")
        fig.savefig(path, dpi=130)
        plt.close(fig)
        paths["fig_recall"] = path

    if report.forgetting:
        names = list(report.forgetting)
        vals = [report.forgetting[n]["floored"] for n in names]
        fig, ax = plt.subplots(figsize=(1.5 + 0.6 * len(names), 3.5))
        ax.bar(range(len(names)), vals, color="#b3452c")
        ax.set_xticks(range(len(names)))
        ax.set_xticklabels(names, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel("Forgetting (max earlier recall - final)")
        ax.set_title("Per-class forgetting")
        ax.grid(axis="y", alpha=0.3)
        fig.tight_layout()
        path = os.path.join(out_dir, f"{basename}_forgetting.png")
        fig.savefig(path, dpi=130)
        plt.close(fig)
        paths["fig_forgetting"] = path
    return paths
