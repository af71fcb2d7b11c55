"""Matplotlib figures written next to the textual reports.

Everything renders through the non-interactive Agg backend, so these
functions are safe to call from the CLI on headless machines.
"""

import os
from typing import Dict, Iterable, List, Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .mapper import TaxonomyMapping  # noqa: E402
from .transfer import EvalReport, table_cells  # noqa: E402

RC = {
    "font.size": 9,
    "axes.titlesize": 10,
    "axes.labelsize": 9,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
    # keep output files byte-stable across runs
    "svg.hashsalt": "product-extract",
}


def _save(fig, path) -> str:
    path = os.fspath(path)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    metadata = {"Software": None} if path.endswith(".png") else None
    fig.savefig(path, metadata=metadata)
    plt.close(fig)
    return path


def plot_transfer_table(reports: Sequence[EvalReport], path) -> str:
    """Heatmap of weighted F1, one row per model/scenario, one column per test shop."""
    rows, cols, cells = table_cells(reports)
    grid = np.full((max(len(rows), 1), max(len(cols), 1)), np.nan)
    for i, r in enumerate(rows):
        for j, c in enumerate(cols):
            if (r, c) in cells:
                grid[i, j] = cells[(r, c)]
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(1.6 + 1.1 * len(cols), 0.9 + 0.45 * len(rows)))
        im = ax.imshow(np.ma.masked_invalid(grid), vmin=0.0, vmax=1.0, cmap="viridis", aspect="auto")
        ax.set_xticks(range(len(cols)), [f"{lang}\n{shop}" for lang, shop in cols])
        ax.set_yticks(range(len(rows)), [f"{g}: {m}" if g else m for g, m in rows])
        for i in range(len(rows)):
            for j in range(len(cols)):
                v = grid[i, j]
                text = "-" if np.isnan(v) else f"{v:.3f}"
                ax.text(j, i, text, ha="center", va="center", color="white" if not np.isnan(v) and v < 0.6 else "black")
        ax.set_title("Weighted F1 by scenario and test shop")
        fig.colorbar(im, ax=ax, fraction=0.046, pad=0.04)
        return _save(fig, path)


def plot_confusion(report: EvalReport, path, labels: Optional[Sequence[str]] = None) -> str:
    if labels is None:
        labels = sorted({g for g, _ in report.confusion} | {p for _, p in report.confusion})
    index = {lab: i for i, lab in enumerate(labels)}
    mat = np.zeros((len(labels), len(labels)), dtype=int)
    for (g, p), n in report.confusion.items():
        mat[index[g], index[p]] += n
    with plt.rc_context(RC):
        size = 1.5 + 0.45 * len(labels)
        fig, ax = plt.subplots(figsize=(size, size))
        ax.imshow(mat, cmap="Blues")
        ax.set_xticks(range(len(labels)), labels, rotation=90)
        ax.set_yticks(range(len(labels)), labels)
        ax.set_xlabel("predicted")
        ax.set_ylabel("gold")
        for i in range(len(labels)):
            for j in range(len(labels)):
                if mat[i, j]:
                    ax.text(j, i, str(mat[i, j]), ha="center", va="center", fontsize=7,
                            color="white" if mat[i, j] > mat.max() / 2 else "black")
        ax.set_title(f"{report.scenario.name} (wF1 {report.weighted_f1:.3f})")
        return _save(fig, path)


def plot_loss_curve(losses: Sequence[float], path, title: str = "Training loss") -> str:
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(4, 2.6))
        ax.plot(range(1, len(losses) + 1), losses, marker="o", ms=3)
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        ax.set_yscale("log")
        ax.set_title(title)
        return _save(fig, path)


def plot_mapping_margins(mapping: TaxonomyMapping, path, gold: Optional[Dict[str, str]] = None) -> str:
    """Horizontal bars of vote margin per source category (red = disagrees with gold)."""
    names = sorted(mapping.entries)
    margins = [mapping.entries[n].margin for n in names]
    colors = []
    for n in names:
        ok = gold is None or gold.get(n) == mapping.entries[n].target
        colors.append("tab:blue" if ok else "tab:red")
    with plt.rc_context(RC):
        fig, ax = plt.subplots(figsize=(5, 0.8 + 0.18 * max(len(names), 1)))
        ax.barh(range(len(names)), margins, color=colors)
        ax.set_yticks(range(len(names)), names, fontsize=6)
        ax.set_xlim(0, 1)
        ax.invert_yaxis()
        ax.set_xlabel("vote margin")
        ax.set_title("Majority-vote margin per source category")
        return _save(fig, path)


def _slug(text: str) -> str:
    return "".join(ch if ch.isalnum() or ch in "-_" else "_" for ch in text).strip("_") or "scenario"


def write_report_figures(reports: Sequence[EvalReport], directory) -> List[str]:
    """Transfer heatmap plus one confusion matrix per scenario; returns written paths."""
    paths = [plot_transfer_table(reports, os.path.join(directory, "transfer_f1.png"))]
    for i, rep in enumerate(reports):
        paths.append(plot_confusion(rep, os.path.join(directory, f"confusion_{i:02d}_{_slug(rep.scenario.name)}.png")))
    return paths
