"""Plot rendering for benchmark reports.

matplotlib is imported lazily with the Agg backend so headless runs and
library users who never plot do not pay for it. Every function takes
already-aggregated rows and writes one PNG; nothing here recomputes
results.
"""

from __future__ import annotations

from collections import defaultdict

import numpy as np


def _plt():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def plot_ratio_vs_nio(cells, path) -> bool:
    """Accuracy against read cost, one line per k, points along the sweep.

    Returns False (and writes nothing) when no cell has both numbers.
    """
    groups = defaultdict(list)
    for cell in cells:
        if cell.error or not np.isfinite(cell.ratio) or not np.isfinite(cell.mean_n_io):
            continue
        groups[cell.spec.k].append((cell.mean_n_io, cell.ratio))
    if not groups:
        return False
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for k in sorted(groups):
        pts = sorted(groups[k])
        xs = [p[0] for p in pts]
        ys = [p[1] for p in pts]
        ax.plot(xs, ys, marker="o", label=f"top-{k}")
    ax.axhline(1.0, color="gray", lw=0.8, ls=":")
    ax.set_xlabel("mean reads per query")
    ax.set_ylabel("overall ratio")
    ax.set_title("accuracy vs read cost")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def plot_latency_hist(records, cells, path, max_cells: int = 6) -> bool:
    """Per-cell turnaround histograms, microsecond log bins."""
    by_cell = defaultdict(list)
    for record in records:
        t = record.get("turnaround_ns")
        if t is not None and t > 0:
            by_cell[record["cell"]].append(t / 1000.0)
    if not by_cell:
        return False
    labels = {cell.cell: cell.spec.label() for cell in cells}
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    chosen = sorted(by_cell)[:max_cells]
    lo = min(min(by_cell[c]) for c in chosen)
    hi = max(max(by_cell[c]) for c in chosen)
    bins = np.geomspace(max(lo, 1e-3), max(hi, lo * 1.001, 1e-2), 40)
    for cell in chosen:
        ax.hist(by_cell[cell], bins=bins, histtype="step",
                label=labels.get(cell, f"cell {cell}"))
    ax.set_xscale("log")
    ax.set_xlabel("query turnaround (us)")
    ax.set_ylabel("queries")
    ax.set_title("latency distribution")
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True


def plot_scaling(rows, path, slope: float | None = None) -> bool:
    """log-log reads per query against n, with the fitted exponent."""
    pts = [(row.n, row.mean_n_io) for row in rows
           if not row.error and np.isfinite(row.mean_n_io) and row.mean_n_io > 0]
    if len(pts) < 2:
        return False
    pts.sort()
    ns = np.array([p[0] for p in pts], dtype=np.float64)
    ys = np.array([p[1] for p in pts], dtype=np.float64)
    plt = _plt()
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    ax.loglog(ns, ys, marker="o", label="measured")
    if slope is not None:
        # Anchor the fitted power law at the first point.
        ax.loglog(ns, ys[0] * (ns / ns[0]) ** slope, ls="--",
                  label=f"fit: n^{slope:.3f}")
    ax.loglog(ns, ys[0] * (ns / ns[0]), ls=":", color="gray", label="linear")
    ax.set_xlabel("n")
    ax.set_ylabel("mean reads per query")
    ax.set_title("read cost scaling")
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return True
