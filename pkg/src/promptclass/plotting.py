"""Figures written next to the machine-readable reports."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "axes.titlesize": 10,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.dpi": 100,
    "savefig.bbox": "tight",
    # keep output byte-stable between runs
    "svg.hashsalt": "promptclass",
}

_METADATA = {"Software": None}


def _save(fig, path: str | Path) -> Path:
    path = Path(path)
    fig.savefig(path, metadata=_METADATA)
    plt.close(fig)
    return path


def plot_attention(alphas: Sequence[float], layer_ids: Sequence[int], path: str | Path,
                   title: str = "") -> Path:
    """Bar chart of attention weight (in %) per selected layer."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 2.6))
        values = [100.0 * a for a in alphas]
        bars = ax.bar([str(i) for i in layer_ids], values, color="#4c72b0")
        for bar, val in zip(bars, values):
            ax.annotate(f"{val:.2f}", (bar.get_x() + bar.get_width() / 2, bar.get_height()),
                        ha="center", va="bottom", fontsize=6)
        ax.set_xlabel("layer")
        ax.set_ylabel("attention (%)")
        ax.set_ylim(0, max(values + [1.0]) * 1.15)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_layer_sweep(rows: Sequence[dict], path: str | Path, title: str = "") -> Path:
    """One line per metric against the first selected layer."""
    labels = {"accuracy": "Accuracy", "macro_p": "Precision", "macro_r": "Recall",
              "macro_f1": "F1-score"}
    starts = [r["start"] for r in rows]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for key, label in labels.items():
            ax.plot(starts, [100 * r["mean"][key] for r in rows], marker="o", ms=3, label=label)
        ax.set_xticks(starts)
        ax.set_xticklabels([f"{r['start']}-{r['stop']}" for r in rows], rotation=45)
        ax.set_xlabel("knowledge layers")
        ax.set_ylabel("score (%)")
        ax.legend(frameon=False)
        if title:
            ax.set_title(title)
        return _save(fig, path)


def plot_ablation(rows: dict[str, dict], path: str | Path) -> Path:
    """Grouped bars of mean metric per variant with std error bars."""
    metrics = ("accuracy", "macro_p", "macro_r", "macro_f1")
    names = list(rows)
    width = 0.8 / max(1, len(names))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 3))
        for i, name in enumerate(names):
            xs = [m + i * width for m in range(len(metrics))]
            ax.bar(xs, [100 * rows[name]["mean"][k] for k in metrics], width,
                   yerr=[100 * rows[name]["std"][k] for k in metrics], label=name, capsize=2)
        ax.set_xticks([m + width * (len(names) - 1) / 2 for m in range(len(metrics))])
        ax.set_xticklabels(["ACC", "P", "R", "F1"])
        ax.set_ylabel("score (%)")
        ax.legend(frameon=False, loc="lower right")
        return _save(fig, path)


def plot_history(history: Sequence[dict], path: str | Path) -> Path:
    with plt.rc_context(STYLE):
        fig, (ax_loss, ax_acc) = plt.subplots(1, 2, figsize=(6, 2.5))
        for split in ("train", "test"):
            rows = [h for h in history if h["split"] == split]
            if not rows:
                continue
            epochs = [h["epoch"] for h in rows]
            ax_loss.plot(epochs, [h["loss"] for h in rows], label=split)
            ax_acc.plot(epochs, [100 * h["accuracy"] for h in rows], label=split)
        ax_loss.set_xlabel("epoch")
        ax_loss.set_ylabel("loss")
        ax_acc.set_xlabel("epoch")
        ax_acc.set_ylabel("accuracy (%)")
        ax_acc.legend(frameon=False)
        return _save(fig, path)


def plot_time_shares(shares: dict[str, dict[str, float]], path: str | Path) -> Path:
    """Stacked horizontal bars of per-stage time share for each variant."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5, 1 + 0.5 * len(shares)))
        for row, (variant, parts) in enumerate(shares.items()):
            left = 0.0
            for stage, frac in parts.items():
                ax.barh(row, 100 * frac, left=left, label=stage if row == 0 else None)
                left += 100 * frac
        ax.set_yticks(range(len(shares)))
        ax.set_yticklabels(list(shares))
        ax.set_xlabel("share of pipeline time (%)")
        ax.legend(frameon=False, fontsize=6, ncol=2)
        return _save(fig, path)
