"""Figures written next to the text/JSON outputs.

All figures go through :func:`save` which pins PNG metadata, so reruns on the
same inputs produce identical files.
"""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 10,
    "axes.labelsize": 11,
    "axes.titlesize": 11,
    "legend.fontsize": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "lines.linewidth": 1.6,
    "savefig.dpi": 120,
}


def new_figure(width: float = 6.0, height: float | None = None):
    """Figure with golden-ratio proportions unless ``height`` is given."""
    if height is None:
        height = width * (math.sqrt(5) - 1.0) / 2.0
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(width, height))
    return fig, ax


def save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context(STYLE):
        fig.tight_layout()
        fig.savefig(path, format="png", metadata={"Software": None})
    plt.close(fig)
    return path


def plot_precision_at_k(reports: Sequence, path, title: str = "") -> Path:
    """Precision@k curves, one per model, with the base rate as a dashed line."""
    fig, ax = new_figure()
    with plt.rc_context(STYLE):
        for r in reports:
            ks = list(r.precision)
            ax.plot(ks, [r.precision[k] for k in ks], marker="o", markersize=3, label=r.model)
        if reports:
            ax.axhline(reports[0].base_rate, color="0.5", linestyle="--", linewidth=1, label="base rate")
        ax.set_xscale("log")
        ax.set_xlabel("k (% of items, lowest predicted first)")
        ax.set_ylabel("precision")
        ax.set_ylim(0, 1.02)
        ax.set_title(title or "Precision@k")
        ax.legend(frameon=False)
    return save(fig, path)


def plot_training_curves(history: Sequence[dict], path, title: str = "") -> Path:
    fig, ax = new_figure()
    epochs = [row["epoch"] for row in history]
    with plt.rc_context(STYLE):
        for key, style in (("train_loss", "-"), ("val_loss", "--")):
            vals = [row.get(key) for row in history]
            if any(v is not None for v in vals):
                ax.plot(epochs, [np.nan if v is None else v for v in vals], style, label=key.replace("_", " "))
        ax.set_xlabel("epoch")
        ax.set_ylabel("loss")
        rhos = [row.get("val_spearman") for row in history]
        if any(v is not None for v in rhos):
            ax2 = ax.twinx()
            ax2.plot(epochs, [np.nan if v is None else v for v in rhos], color="C3", label="val Spearman")
            ax2.set_ylabel("Spearman")
            ax2.set_ylim(-1, 1)
            ax2.legend(loc="lower right", frameon=False)
        ax.legend(loc="upper right", frameon=False)
        ax.set_title(title or "training")
    return save(fig, path)


def plot_calibration(mapping, raw, targets, path) -> Path:
    """Observed labels against raw scores with the fitted monotone map."""
    fig, ax = new_figure()
    with plt.rc_context(STYLE):
        ax.scatter(raw, targets, s=6, alpha=0.4, color="0.4", label="observed")
        ax.plot(mapping.breakpoints, mapping.values, color="C0", label="isotonic map")
        ax.set_xlabel("raw rank score")
        ax.set_ylabel("label")
        ax.set_ylim(mapping.lo - 0.5, mapping.hi + 0.5)
        ax.legend(frameon=False)
        ax.set_title("calibration")
    return save(fig, path)
