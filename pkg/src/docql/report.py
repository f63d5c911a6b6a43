"""Report rendering: CSV, aligned text tables, and matplotlib figures.

Every benchmark run writes the same three artifacts next to each other:
report.csv (stable schema: group,strategy,mean_tokens,mean_calls,
mean_wall_ms,f1), a human-readable table on stdout, and PNG figures
rendered from the same rows.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

CSV_COLUMNS = ["group", "strategy", "mean_tokens", "mean_calls", "mean_wall_ms", "f1"]


@dataclass
class BenchRow:
    group: str
    strategy: str
    mean_tokens: float
    mean_calls: float
    mean_wall_ms: float
    f1: float


def write_report_csv(rows: list[BenchRow], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for row in sorted(rows, key=lambda r: (r.group, r.strategy)):
            writer.writerow(
                [
                    row.group,
                    row.strategy,
                    f"{row.mean_tokens:.1f}",
                    f"{row.mean_calls:.2f}",
                    f"{row.mean_wall_ms:.2f}",
                    f"{row.f1:.4f}",
                ]
            )


def format_table(rows: list[BenchRow]) -> str:
    header = ["group", "strategy", "mean_tokens", "mean_calls", "mean_wall_ms", "f1"]
    cells = [header] + [
        [
            r.group,
            r.strategy,
            f"{r.mean_tokens:.1f}",
            f"{r.mean_calls:.2f}",
            f"{r.mean_wall_ms:.2f}",
            f"{r.f1:.4f}",
        ]
        for r in sorted(rows, key=lambda r: (r.group, r.strategy))
    ]
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    lines = []
    for i, row in enumerate(cells):
        lines.append("  ".join(cell.ljust(widths[j]) for j, cell in enumerate(row)))
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _grouped_bars(ax, rows: list[BenchRow], metric: str, title: str) -> None:
    groups = sorted({r.group for r in rows})
    strategies = sorted({r.strategy for r in rows})
    width = 0.8 / max(1, len(strategies))
    for si, strategy in enumerate(strategies):
        xs, ys = [], []
        for gi, group in enumerate(groups):
            match = [r for r in rows if r.group == group and r.strategy == strategy]
            if match:
                xs.append(gi + si * width)
                ys.append(getattr(match[0], metric))
        ax.bar(xs, ys, width=width, label=strategy)
    ax.set_xticks([i + 0.4 - width / 2 for i in range(len(groups))])
    ax.set_xticklabels(groups)
    ax.set_title(title)
    ax.set_xlabel("query group")
    ax.set_ylabel(metric)
    ax.legend(fontsize=7)


def render_report_figures(rows: list[BenchRow], out_dir: str | Path) -> list[Path]:
    """Render the grouped-bar figures next to the CSV; returns written paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6.4, 3.6), dpi=120)
    _grouped_bars(ax, rows, "mean_tokens", "Mean token cost per query group")
    fig.tight_layout()
    path = out / "bench_tokens.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    fig, ax = plt.subplots(figsize=(6.4, 3.6), dpi=120)
    _grouped_bars(ax, rows, "f1", "F1 vs sidecar truth per query group")
    ax.set_ylim(0.0, 1.05)
    fig.tight_layout()
    path = out / "bench_f1.png"
    fig.savefig(path)
    plt.close(fig)
    written.append(path)

    return written


def render_per_doc_cost_figure(per_doc_cost: dict[str, int], path: str | Path) -> Path:
    """Bar chart of evaluation-phase token cost per document for one query."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    docs = sorted(per_doc_cost)
    costs = [per_doc_cost[d] for d in docs]
    fig, ax = plt.subplots(figsize=(max(4.0, 0.12 * len(docs) + 2), 3.2), dpi=120)
    ax.bar(range(len(docs)), costs, color="#4878b0")
    ax.set_xlabel("document")
    ax.set_ylabel("tokens")
    ax.set_title("Per-document token cost")
    if len(docs) <= 30:
        ax.set_xticks(range(len(docs)))
        ax.set_xticklabels(docs, rotation=90, fontsize=6)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path
