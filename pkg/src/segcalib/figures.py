"""Matplotlib renderings of the reliability diagrams and histograms.

The CLI report path writes both the deterministic SVG artifacts and these
PNG figures.  PNG output is for human eyes; byte-level reproducibility is
the SVG path's job, so here we only strip the timestamp-bearing metadata.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .viz import DatasetHistogram, DiagramSpec  # noqa: E402

_SAVE_KW = {"dpi": 110, "metadata": {"Software": None}}


def save_diagram_png(spec: DiagramSpec, path: str | Path) -> None:
    """Reliability diagram: observed-frequency bars against the identity."""
    m = spec.num_bins
    edges = np.arange(m + 1) / m
    centres = (edges[:-1] + edges[1:]) / 2
    filled = ~spec.empty

    fig, ax = plt.subplots(figsize=(5.2, 5.2))
    ax.plot([0, 1], [0, 1], ls="--", lw=1, color="gray", label="identity")
    ax.bar(
        centres[filled], spec.o[filled], width=0.92 / m,
        color="steelblue", alpha=0.65, edgecolor="navy", linewidth=0.5,
        label="observed",
    )
    ax.plot(
        centres[filled], spec.e[filled], ls="none", marker="_",
        markersize=10, markeredgewidth=1.6, color="crimson", label="expected",
    )
    n_max = spec.n.max() if spec.n.max() > 0 else 1.0
    ax.bar(
        centres[filled], 0.2 * spec.n[filled] / n_max, width=0.92 / m,
        color="darkorange", alpha=0.45, label="voxel share",
    )
    ax.set_xlim(0, 1)
    ax.set_ylim(0, 1)
    ax.set_xlabel("expected probability")
    ax.set_ylabel("observed frequency")
    ax.set_title(
        f"{spec.class_label}   ACE={spec.ace:.4f}  ECE={spec.ece:.4f}  MCE={spec.mce:.4f}",
        fontsize=10,
    )
    ax.legend(loc="upper left", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_histogram_png(hist: DatasetHistogram, path: str | Path) -> None:
    """Dataset reliability histogram as a gamma-corrected image grid."""
    inten = hist.intensity()
    fig, ax = plt.subplots(figsize=(5.4, 5.0))
    im = ax.imshow(
        inten.T, origin="lower", cmap="viridis", aspect="auto",
        extent=(0, 1, 0, 1), vmin=0.0, vmax=1.0,
    )
    ax.plot([0, 1], [0, 1], ls="--", lw=1, color="white", alpha=0.8)
    ax.set_xlabel("expected probability bin")
    ax.set_ylabel("per-image observed frequency")
    ax.set_title(f"{hist.class_label} (gamma={hist.gamma:g})", fontsize=10)
    fig.colorbar(im, ax=ax, label="relative density")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)


def save_sweep_png(
    dimension: str,
    values: list[float],
    dsc_by_value: dict[float, list[float]],
    ace_by_value: dict[float, list[float]],
    path: str | Path,
) -> None:
    """Sweep summary: mean DSC and mean ACE against the swept dimension."""
    xs = list(values)
    dsc_mean = [float(np.mean(dsc_by_value[v])) for v in xs]
    dsc_std = [float(np.std(dsc_by_value[v], ddof=1)) if len(dsc_by_value[v]) > 1 else 0.0 for v in xs]
    ace_mean = [float(np.mean(ace_by_value[v])) for v in xs]
    ace_std = [float(np.std(ace_by_value[v], ddof=1)) if len(ace_by_value[v]) > 1 else 0.0 for v in xs]

    fig, ax1 = plt.subplots(figsize=(6.0, 4.2))
    ax1.errorbar(xs, dsc_mean, yerr=dsc_std, marker="o", color="steelblue", label="DSC")
    ax1.set_xlabel(dimension)
    ax1.set_ylabel("DSC", color="steelblue")
    ax2 = ax1.twinx()
    ax2.errorbar(xs, ace_mean, yerr=ace_std, marker="s", color="crimson", label="macro ACE")
    ax2.set_ylabel("macro ACE", color="crimson")
    if dimension == "lambda" and min(xs) > 0:
        ax1.set_xscale("log")
    fig.tight_layout()
    fig.savefig(path, **_SAVE_KW)
    plt.close(fig)
