"""Deterministic SVG figures for reports.

Figures are rendered with the non-interactive Agg backend and saved as SVG
with a fixed hash salt and no date metadata, so identical inputs give
byte-identical files.
"""
from __future__ import annotations

import io as _io
from pathlib import Path
from typing import Mapping, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import write_text_atomic  # noqa: E402

STYLE = {
    "svg.hashsalt": "spinemorph",
    "svg.fonttype": "none",
    "font.size": 9,
    "axes.spines.top": False,
    "axes.spines.right": False,
    "figure.figsize": (4.5, 3.4),
}
COLORS = {"P": "#c0392b", "NP": "#2471a3", "pred": "#7d3c98", "truth": "#444444"}


def save_svg(fig, path) -> Path:
    buf = _io.StringIO()
    fig.savefig(buf, format="svg", metadata={"Date": None, "Creator": None}, bbox_inches=None)
    plt.close(fig)
    return write_text_atomic(path, buf.getvalue())


def roc_figure(points: Sequence[Sequence[float]], path, auc: float | None = None, title: str = "ROC") -> Path:
    pts = np.asarray(points, dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot([0, 1], [0, 1], ls=":", color="0.6", lw=0.8)
        ax.plot(pts[:, 0], pts[:, 1], color=COLORS["P"], lw=1.5, drawstyle="default")
        ax.set_xlabel("false positive rate")
        ax.set_ylabel("true positive rate")
        ax.set_xlim(0, 1)
        ax.set_ylim(0, 1.02)
        ax.set_title(title if auc is None else f"{title} (AUC {auc:.3f})")
        fig.tight_layout()
        return save_svg(fig, path)


def error_bar_figure(summary: Mapping[str, tuple[float, float]], path, ylabel: str, title: str = "") -> Path:
    """Bars of mean with a one-standard-deviation whisker per named group."""
    names = list(summary)
    mean = np.array([summary[k][0] for k in names], dtype=float)
    std = np.array([summary[k][1] for k in names], dtype=float)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        x = np.arange(len(names))
        ax.bar(x, mean, yerr=std, color="0.75", edgecolor="0.3", capsize=3, lw=0.8)
        ax.set_xticks(x)
        ax.set_xticklabels(names)
        ax.set_ylabel(ylabel)
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return save_svg(fig, path)


def cobb_trajectories_figure(rows: Sequence[tuple[str, Sequence[float], Sequence[float]]], path) -> Path:
    """Main Cobb angle against visit time, one line per patient coloured by label."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label, times, cobb in rows:
            ax.plot(times, cobb, color=COLORS.get(label, "0.5"), lw=0.7, alpha=0.7, marker=".", ms=2)
        for label in ("P", "NP"):
            ax.plot([], [], color=COLORS[label], label=label)
        ax.legend(frameon=False)
        ax.set_xlabel("months since baseline")
        ax.set_ylabel("main Cobb angle (deg)")
        fig.tight_layout()
        return save_svg(fig, path)


def prediction_figure(times: Sequence[float], predicted: Sequence[float], path, truth=None, title: str = "") -> Path:
    """Predicted main Cobb angle over the requested months, with observed values if known."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        ax.plot(times, predicted, color=COLORS["pred"], marker="o", ms=3, lw=1.2, label="predicted")
        if truth is not None:
            t_obs, c_obs = truth
            ax.plot(t_obs, c_obs, color=COLORS["truth"], marker="s", ms=3, lw=0.8, ls="--", label="observed")
        ax.legend(frameon=False)
        ax.set_xlabel("months since baseline")
        ax.set_ylabel("main Cobb angle (deg)")
        if title:
            ax.set_title(title)
        fig.tight_layout()
        return save_svg(fig, path)


def latent_figure(latents: np.ndarray, labels: Sequence[str], path, query=None, trace=None) -> Path:
    """First two latent coordinates of the anchors, with an optional query point and latent path."""
    x = np.asarray(latents, dtype=float)
    lab = np.asarray(labels)
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots()
        for label in ("NP", "P"):
            sel = lab == label
            ax.scatter(x[sel, 0], x[sel, 1], s=6, color=COLORS[label], label=label, alpha=0.7, lw=0)
        if trace is not None:
            tr = np.asarray(trace, dtype=float)
            ax.plot(tr[:, 0], tr[:, 1], color=COLORS["pred"], lw=1.2, marker=".", ms=3)
        if query is not None:
            q = np.asarray(query, dtype=float)
            ax.scatter([q[0]], [q[1]], marker="*", s=60, color="k", label="query", zorder=3)
        ax.legend(frameon=False)
        ax.set_xlabel("latent 1")
        ax.set_ylabel("latent 2")
        fig.tight_layout()
        return save_svg(fig, path)
