"""Report rendering: one structured line per metric on stdout, a delimited
CSV next to the run, and matplotlib figures for the packing comparison.

Acceptance checks parse the ``#METRIC key=value`` lines, so keys are stable.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def metric_lines(metrics: dict) -> list:
    lines = []
    for key, value in metrics.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"#METRIC {key}={value}")
    return lines


def print_metrics(metrics: dict):
    for line in metric_lines(metrics):
        print(line)


def parse_metric_lines(text: str) -> dict:
    """Inverse of metric_lines, for tests and tooling."""
    out = {}
    for line in text.splitlines():
        if line.startswith("#METRIC "):
            key, _, value = line[len("#METRIC ") :].partition("=")
            out[key] = value
    return out


def write_csv_report(path, rows: list, fieldnames: list):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def render_op_figure(path, counts: dict, title: str):
    """Bar chart of one run's operation counters."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = [k for k in ("encrypt", "mult", "cmult", "add", "rotation") if k in counts]
    vals = [max(counts[k], 0) for k in keys]
    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.bar(keys, vals, color="#3b6ea5")
    ax.set_yscale("symlog")
    ax.set_ylabel("operations")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def render_compare_figure(path, compact: dict, interleaved: dict, title: str):
    """Grouped log-scale bars: compact vs interleaved per metric."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = [k for k in compact if k in interleaved]
    x = range(len(keys))
    width = 0.38
    fig, ax = plt.subplots(figsize=(6.5, 3.6))
    ax.bar([i - width / 2 for i in x], [max(compact[k], 0.1) for k in keys],
           width, label="compact", color="#2d7f5e")
    ax.bar([i + width / 2 for i in x], [max(interleaved[k], 0.1) for k in keys],
           width, label="interleaved", color="#a5483b")
    ax.set_xticks(list(x))
    ax.set_xticklabels(keys, rotation=20, ha="right", fontsize=8)
    ax.set_yscale("log")
    ax.set_title(title)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
