"""CSV emission and the figures rendered next to them.

Every table the CLI writes is a plain CSV with a header; the figures are
companions saved as PNG in the same directory, so the delimited output
stays the machine-readable source of truth.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

TRACE_HEADER = ("iter", "current_cost", "best_cost", "destroy_id", "repair_id",
                "tier", "temperature")


def write_trace_csv(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_HEADER)
        for row in trace:
            writer.writerow([row.iteration, repr(row.current_cost), repr(row.best_cost),
                             row.destroy_id, row.repair_id, row.tier,
                             repr(row.temperature)])


def write_table(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow(row)


def format_text_table(header, rows) -> str:
    """Aligned fixed-width rendering of a small table."""
    cells = [list(map(str, header))] + [list(map(str, r)) for r in rows]
    widths = [max(len(row[c]) for row in cells) for c in range(len(header))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


def plot_convergence(path, traces, title="Episode convergence"):
    """Best-cost-so-far curves, one line per (label, trace) pair."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for label, trace in traces:
        ax.plot([row.iteration for row in trace], [row.best_cost for row in trace],
                label=label, linewidth=1.2)
    ax.set_xlabel("iteration")
    ax.set_ylabel("best cost")
    ax.set_title(title)
    if len(traces) <= 12:
        ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_best_trace(path, generations, scores, title="Best score per generation"):
    fig, ax = plt.subplots(figsize=(7, 4.5))
    ax.plot(generations, scores, marker=".", linewidth=1.2)
    ax.set_xlabel("generation")
    ax.set_ylabel("mean best cost over training batch")
    ax.set_title(title)
    ax.grid(alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def plot_method_bars(path, labels, group_names, values, title="Objective by method"):
    """Grouped bars: one group per instance set, one bar per method."""
    fig, ax = plt.subplots(figsize=(7, 4.5))
    n_groups = len(group_names)
    n_methods = len(labels)
    width = 0.8 / max(n_methods, 1)
    for m, label in enumerate(labels):
        xs = [g + m * width for g in range(n_groups)]
        ax.bar(xs, [values[g][m] for g in range(n_groups)], width=width, label=label)
    ax.set_xticks([g + 0.4 - width / 2 for g in range(n_groups)])
    ax.set_xticklabels(group_names, fontsize=8)
    ax.set_ylabel("mean objective")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(alpha=0.3, axis="y")
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def ensure_dir(path) -> Path:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    return path
