"""Figure rendering for evaluation reports."""

from __future__ import annotations

from pathlib import Path
from typing import Union

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .metrics import MetricReport
from .panoptic import ClassTable


def render_report_figure(report: MetricReport, class_table: ClassTable, path: Union[str, Path]) -> None:
    """Write a per-class bar chart of the strict and relaxed scores to ``path``."""
    class_ids = sorted(report.per_class)
    labels = [f"{class_table.entries[c].name or c} ({c})" for c in class_ids]
    pq = [report.per_class[c].pq if report.per_class[c].pq is not None else 0.0 for c in class_ids]
    dagger = [
        report.per_class[c].pq_dagger if report.per_class[c].pq_dagger is not None else 0.0
        for c in class_ids
    ]

    x = range(len(class_ids))
    width = 0.38
    fig, ax = plt.subplots(figsize=(max(6.0, 0.7 * len(class_ids) + 2), 4.0))
    ax.bar([i - width / 2 for i in x], pq, width, label="pq", color="#2c7fb8")
    ax.bar([i + width / 2 for i in x], dagger, width, label="pq_dagger", color="#7fcdbb")
    ax.set_xticks(list(x))
    ax.set_xticklabels(labels, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0.0, 1.0)
    ax.set_ylabel("score")
    overall = "pq={} pq_dagger={}".format(
        "n/a" if report.pq is None else f"{report.pq:.4f}",
        "n/a" if report.pq_dagger is None else f"{report.pq_dagger:.4f}",
    )
    ax.set_title(overall)
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
