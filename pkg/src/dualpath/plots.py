"""Figure rendering for the report outputs.

Every CLI report path keeps its delimited files (JSONL/CSV) as the source of
truth; these helpers render companion PNGs next to them: training curves from
a metrics log, per-class accuracy bars from an ablation grid, a confusion
matrix heatmap, and attention-weight heatmaps from exported traces.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

__all__ = [
    "plot_training_curves",
    "plot_confusion_matrix",
    "plot_per_class_bars",
    "plot_attention_traces",
]


def _read_jsonl(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def plot_training_curves(metrics_path, out_path) -> Path:
    """Loss and accuracy per epoch, train and test splits side by side."""
    records = _read_jsonl(metrics_path)
    fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(9, 3.4))
    for split, style in (("train", "-"), ("test", "--")):
        recs = [r for r in records if r["split"] == split]
        if not recs:
            continue
        epochs = [r["epoch"] for r in recs]
        ax_loss.plot(epochs, [r["l_total"] for r in recs], style, label=f"{split} total")
        ax_loss.plot(epochs, [r["l_cls"] for r in recs], style, alpha=0.5, label=f"{split} cls")
        ax_acc.plot(epochs, [r["group_accuracy"] for r in recs], style, label=f"{split} group")
        ax_acc.plot(epochs, [r["individual_accuracy"] for r in recs], style, alpha=0.5,
                    label=f"{split} indiv")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("loss")
    ax_loss.legend(fontsize=7)
    ax_acc.set_xlabel("epoch")
    ax_acc.set_ylabel("accuracy")
    ax_acc.set_ylim(0, 1.02)
    ax_acc.legend(fontsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def plot_confusion_matrix(confusion: np.ndarray, out_path) -> Path:
    fig, ax = plt.subplots(figsize=(4.2, 3.8))
    im = ax.imshow(confusion, cmap="Blues")
    for i in range(confusion.shape[0]):
        for j in range(confusion.shape[1]):
            ax.text(j, i, str(int(confusion[i, j])), ha="center", va="center", fontsize=7)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    fig.colorbar(im, ax=ax)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def plot_per_class_bars(cells: list[dict], out_path) -> Path:
    """Grouped bars of per-class accuracy, one bar group per ablation cell.

    ``cells`` carries dicts with "cell" and "per_class_accuracy" keys, e.g.
    rows of an ablation.jsonl.
    """
    n_classes = len(cells[0]["per_class_accuracy"])
    width = 0.8 / max(len(cells), 1)
    x = np.arange(n_classes)
    fig, ax = plt.subplots(figsize=(1.6 + 1.1 * n_classes, 3.4))
    for i, cell in enumerate(cells):
        ax.bar(x + i * width, cell["per_class_accuracy"], width, label=str(cell["cell"]))
    ax.set_xticks(x + width * (len(cells) - 1) / 2)
    ax.set_xticklabels([f"class {c}" for c in range(n_classes)])
    ax.set_ylabel("accuracy")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path


def plot_attention_traces(records: list[dict], out_path, max_panels: int = 16) -> Path:
    """Heatmap grid of exported attention matrices (one panel per record)."""
    records = records[:max_panels]
    cols = min(4, len(records))
    rows = (len(records) + cols - 1) // cols
    fig, axes = plt.subplots(rows, cols, figsize=(2.6 * cols, 2.4 * rows), squeeze=False)
    for ax in axes.flat:
        ax.axis("off")
    for ax, rec in zip(axes.flat, records):
        w = np.asarray(rec["weights"])
        ax.axis("on")
        ax.imshow(w, cmap="viridis", vmin=0.0, vmax=max(1e-9, w.max()))
        ax.set_title(f"{rec['path']} {rec['unit'][0]}{rec['index']} h{rec['head']}", fontsize=7)
        ax.set_xticks([])
        ax.set_yticks([])
    fig.tight_layout()
    out_path = Path(out_path)
    fig.savefig(out_path, dpi=130)
    plt.close(fig)
    return out_path
