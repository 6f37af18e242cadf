"""Matplotlib renderings for snapshots and reports.

Everything draws through the Agg backend straight to files, with fixed
metadata so identical inputs produce byte-identical PNGs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .errors import BadConfig

_PNG_METADATA = {"Software": "selfecho"}
_DPI = 100


def _save(fig, path) -> None:
    fig.savefig(str(path), dpi=_DPI, metadata=_PNG_METADATA)
    plt.close(fig)


def render_panels(panels, titles, path) -> None:
    """One row of spectrogram images on a shared [0, 1] color scale."""
    if len(panels) != len(titles) or not panels:
        raise BadConfig("need one title per panel and at least one panel")
    fig, axes = plt.subplots(
        1, len(panels), figsize=(3.4 * len(panels), 3.6), squeeze=False
    )
    image = None
    for ax, pixels, title in zip(axes[0], panels, titles):
        image = ax.imshow(
            np.asarray(pixels, dtype=np.float64),
            origin="lower",
            aspect="auto",
            cmap="magma",
            vmin=0.0,
            vmax=1.0,
        )
        ax.set_title(title)
        ax.set_xlabel("frame")
        ax.set_ylabel("mel band")
    fig.colorbar(image, ax=axes[0, -1], fraction=0.046)
    fig.tight_layout()
    _save(fig, path)


def render_loss_curves(rows, path) -> None:
    """Training losses against step index.

    ``rows`` holds dicts with keys d_loss, g_adv, total and optionally
    l1 or cycle (None where a term does not apply to the regime).
    """
    if not rows:
        raise BadConfig("no loss rows to plot")
    steps = np.arange(len(rows))
    fig, ax = plt.subplots(figsize=(7.2, 4.2))
    for key, label in (
        ("d_loss", "discriminator"),
        ("g_adv", "generator adversarial"),
        ("l1", "l1"),
        ("cycle", "cycle"),
        ("total", "generator total"),
    ):
        values = [row.get(key) for row in rows]
        if all(v is None for v in values):
            continue
        ax.plot(steps, [np.nan if v is None else v for v in values], label=label)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(loc="upper right", fontsize=8)
    fig.tight_layout()
    _save(fig, path)


def render_metric_bars(labels, means, stds, path, title, ylabel) -> None:
    """Bar chart of per-system aggregates with one-sigma whiskers."""
    if not (len(labels) == len(means) == len(stds)) or not labels:
        raise BadConfig("labels, means, and stds must align and be non-empty")
    positions = np.arange(len(labels))
    fig, ax = plt.subplots(figsize=(1.6 + 1.4 * len(labels), 4.0))
    ax.bar(positions, means, yerr=stds, capsize=4, color="#4878a8")
    ax.set_xticks(positions)
    ax.set_xticklabels(labels, rotation=15, ha="right")
    ax.set_title(title)
    ax.set_ylabel(ylabel)
    fig.tight_layout()
    _save(fig, path)
