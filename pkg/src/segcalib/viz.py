"""Reliability diagrams and dataset reliability histograms.

A reliability diagram shows, for one class, the observed foreground
frequency o_m against the expected probability e_m per confidence bin,
with the identity line as the perfectly calibrated reference and a voxel
count strip along the bottom.  A dataset reliability histogram aggregates
many per-image curves: for each confidence bin m (column) it histograms
the per-image o_m values into R rows, so a well-calibrated model shows
mass concentrated on the diagonal.

Both render to CSV and to hand-built, fully deterministic SVG (the same
spec always produces byte-identical files).  Raw counts are kept next to
the display intensities: cells are normalized by their column maximum and
then gamma-corrected (intensity = (count / column_max) ** gamma), which
keeps sparse columns visible.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .reliability import CalibrationReport, ReliabilityCurve

DEFAULT_ROWS = 20
DEFAULT_GAMMA = 0.5


@dataclass
class DiagramSpec:
    """One class's reliability curve plus annotation metrics."""

    class_label: str
    num_bins: int
    e: np.ndarray       # (M,)
    o: np.ndarray       # (M,)
    n: np.ndarray       # (M,)
    empty: np.ndarray   # (M,) bool
    ace: float
    ece: float
    mce: float


@dataclass
class DatasetHistogram:
    """M x R grid of per-image observed-frequency counts for one class."""

    class_label: str
    num_bins: int
    rows: int
    gamma: float
    counts: np.ndarray  # (M, R) int64, row 0 = o in [0, 1/R)

    def intensity(self) -> np.ndarray:
        """Column-max normalized, gamma-corrected display values in [0,1]."""
        col_max = self.counts.max(axis=1, keepdims=True)
        scale = np.where(col_max > 0, col_max, 1)
        return (self.counts / scale) ** self.gamma

    @property
    def num_images_per_bin(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def build_diagram(
    curve: ReliabilityCurve,
    class_index: int,
    report: CalibrationReport,
    class_label: str | None = None,
) -> DiagramSpec:
    """Extract one class's diagram data from a finalized curve."""
    if not (0 <= class_index < curve.num_classes):
        raise ValueError(f"class index {class_index} out of range")
    if curve.n[class_index].sum() == 0:
        raise ValueError(f"class {class_index} has no mass in this curve")
    return DiagramSpec(
        class_label=class_label or f"class_{class_index}",
        num_bins=curve.config.num_bins,
        e=curve.e[class_index].copy(),
        o=curve.o[class_index].copy(),
        n=curve.n[class_index].copy(),
        empty=curve.empty[class_index].copy(),
        ace=float(report.ace[class_index]),
        ece=float(report.ece[class_index]),
        mce=float(report.mce[class_index]),
    )


def observed_frequency_row(o: float, rows: int) -> int:
    """Row of an observed frequency: floor(o * R), with o = 1 in the top row."""
    return min(int(np.floor(o * rows)), rows - 1)


def build_dataset_histogram(
    per_image_curves: list[ReliabilityCurve],
    class_index: int,
    rows: int = DEFAULT_ROWS,
    gamma: float = DEFAULT_GAMMA,
    class_label: str | None = None,
) -> DatasetHistogram:
    """Histogram per-image observed frequencies per confidence bin.

    Images where the class has no foreground voxels are skipped entirely;
    within a contributing image only populated (non-empty) bins count.
    """
    if not per_image_curves:
        raise ValueError("no curves supplied")
    if rows < 1:
        raise ValueError(f"rows must be >= 1, got {rows}")
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    m = per_image_curves[0].config.num_bins
    counts = np.zeros((m, rows), dtype=np.int64)
    contributed = 0
    for curve in per_image_curves:
        if curve.config.num_bins != m:
            raise ValueError("curves use inconsistent bin counts")
        if not curve.present_classes()[class_index]:
            continue
        contributed += 1
        for bin_idx in range(m):
            if curve.empty[class_index, bin_idx]:
                continue
            row = observed_frequency_row(float(curve.o[class_index, bin_idx]), rows)
            counts[bin_idx, row] += 1
    if contributed == 0:
        raise ValueError(f"class {class_index} absent from every image")
    return DatasetHistogram(
        class_label=class_label or f"class_{class_index}",
        num_bins=m,
        rows=rows,
        gamma=gamma,
        counts=counts,
    )


def sum_histograms(histograms: list[DatasetHistogram], class_label: str = "mean") -> DatasetHistogram:
    """Class-averaged view: sum raw counts across classes, then normalize."""
    if not histograms:
        raise ValueError("no histograms supplied")
    first = histograms[0]
    counts = np.zeros_like(first.counts)
    for h in histograms:
        if h.counts.shape != first.counts.shape:
            raise ValueError("histograms have inconsistent grids")
        counts += h.counts
    return DatasetHistogram(class_label, first.num_bins, first.rows, first.gamma, counts)


# --- CSV ---------------------------------------------------------------

def write_curve_csv(path: str | Path, curve: ReliabilityCurve, class_labels: list[str] | None = None) -> None:
    """Columns: class,bin,e,o,n,empty — one row per (class, bin)."""
    labels = class_labels or [f"class_{c}" for c in range(curve.num_classes)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "bin", "e", "o", "n", "empty"])
        for c in range(curve.num_classes):
            for m in range(curve.config.num_bins):
                writer.writerow([
                    labels[c], m,
                    repr(float(curve.e[c, m])), repr(float(curve.o[c, m])),
                    repr(float(curve.n[c, m])), int(curve.empty[c, m]),
                ])


def write_histogram_csv(path: str | Path, histograms: list[DatasetHistogram]) -> None:
    """Columns: class,bin,row,count — M*R rows per class, ordered."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["class", "bin", "row", "count"])
        for h in histograms:
            for m in range(h.num_bins):
                for r in range(h.rows):
                    writer.writerow([h.class_label, m, r, int(h.counts[m, r])])


def read_histogram_csv(path: str | Path) -> dict[str, np.ndarray]:
    """Parse a histogram CSV back into per-class count grids."""
    cells: dict[str, dict[tuple[int, int], int]] = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            cells.setdefault(row["class"], {})[(int(row["bin"]), int(row["row"]))] = int(row["count"])
    grids = {}
    for label, entries in cells.items():
        m = max(k[0] for k in entries) + 1
        r = max(k[1] for k in entries) + 1
        grid = np.zeros((m, r), dtype=np.int64)
        for (bi, ri), count in entries.items():
            grid[bi, ri] = count
        grids[label] = grid
    return grids


# --- SVG ---------------------------------------------------------------

_W = 480
_H = 480
_ML, _MT, _MR, _MB = 64, 40, 20, 56  # margins
_PW = _W - _ML - _MR
_PH = _H - _MT - _MB


def _fx(u: float) -> str:
    """Data x in [0,1] to SVG x."""
    return f"{_ML + u * _PW:.2f}"


def _fy(v: float) -> str:
    """Data y in [0,1] to SVG y (inverted axis)."""
    return f"{_MT + (1.0 - v) * _PH:.2f}"


def _svg_header(title: str) -> list[str]:
    return [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="12">',
        f'<title>{title}</title>',
        f'<path d="M{_ML} {_MT} H{_ML + _PW} V{_MT + _PH} H{_ML} Z" '
        'fill="white" stroke="black" stroke-width="1"/>',
    ]


def _axes(xlabel: str, ylabel: str) -> list[str]:
    parts = []
    for v, lbl in ((0.0, "0.0"), (0.5, "0.5"), (1.0, "1.0")):
        parts.append(
            f'<text x="{_fx(v)}" y="{_MT + _PH + 18}" text-anchor="middle">{lbl}</text>'
        )
        parts.append(
            f'<text x="{_ML - 8}" y="{_fy(v)}" text-anchor="end" dominant-baseline="middle">{lbl}</text>'
        )
    parts.append(
        f'<text x="{_ML + _PW / 2:.2f}" y="{_H - 12}" text-anchor="middle">{xlabel}</text>'
    )
    parts.append(
        f'<text x="16" y="{_MT + _PH / 2:.2f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {_MT + _PH / 2:.2f})">{ylabel}</text>'
    )
    return parts


def diagram_svg(spec: DiagramSpec) -> str:
    """Render a reliability diagram as a standalone SVG string."""
    m = spec.num_bins
    parts = _svg_header(f"reliability: {spec.class_label}")
    parts += _axes("expected probability", "observed frequency")
    # identity line
    parts.append(
        f'<line x1="{_fx(0)}" y1="{_fy(0)}" x2="{_fx(1)}" y2="{_fy(1)}" '
        'stroke="gray" stroke-width="1" stroke-dasharray="4 3"/>'
    )
    n_max = float(spec.n.max()) if spec.n.max() > 0 else 1.0
    for i in range(m):
        if spec.empty[i]:
            continue
        lo, hi = i / m, (i + 1) / m
        x0 = _ML + lo * _PW
        width = _PW / m
        # observed-frequency bar
        o = float(spec.o[i])
        y_top = _MT + (1.0 - o) * _PH
        parts.append(
            f'<rect x="{x0:.2f}" y="{y_top:.2f}" width="{width:.2f}" '
            f'height="{o * _PH:.2f}" fill="steelblue" fill-opacity="0.55" stroke="navy" stroke-width="0.5"/>'
        )
        # voxel-count strip (bottom fifth of the plot)
        frac = float(spec.n[i]) / n_max
        h = frac * 0.2 * _PH
        parts.append(
            f'<rect x="{x0:.2f}" y="{_MT + _PH - h:.2f}" width="{width:.2f}" '
            f'height="{h:.2f}" fill="darkorange" fill-opacity="0.5"/>'
        )
        # expected-probability tick
        e = float(spec.e[i])
        ye = _MT + (1.0 - e) * _PH
        parts.append(
            f'<line x1="{x0:.2f}" y1="{ye:.2f}" x2="{x0 + width:.2f}" y2="{ye:.2f}" '
            'stroke="crimson" stroke-width="1.5"/>'
        )
    parts.append(
        f'<text x="{_ML}" y="{_MT - 22}" text-anchor="start">{spec.class_label}</text>'
    )
    parts.append(
        f'<text x="{_ML}" y="{_MT - 8}" text-anchor="start">'
        f'ACE={spec.ace:.4f} ECE={spec.ece:.4f} MCE={spec.mce:.4f}</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def histogram_svg(hist: DatasetHistogram) -> str:
    """Render a dataset reliability histogram; exactly M*R rect cells."""
    m, r = hist.num_bins, hist.rows
    inten = hist.intensity()
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
        f'viewBox="0 0 {_W} {_H}" font-family="monospace" font-size="12">',
        f'<title>dataset reliability: {hist.class_label}</title>',
    ]
    parts += _axes("expected probability bin", "observed frequency")
    cw = _PW / m
    ch = _PH / r
    for mi in range(m):
        for ri in range(r):
            gray = int(round(255 * (1.0 - float(inten[mi, ri]))))
            x = _ML + mi * cw
            y = _MT + (r - 1 - ri) * ch          # row 0 at the bottom
            parts.append(
                f'<rect x="{x:.2f}" y="{y:.2f}" width="{cw:.2f}" height="{ch:.2f}" '
                f'fill="rgb({gray},{gray},{gray})"/>'
            )
    parts.append(
        f'<path d="M{_ML} {_MT} H{_ML + _PW} V{_MT + _PH} H{_ML} Z" '
        'fill="none" stroke="black" stroke-width="1"/>'
    )
    parts.append(
        f'<text x="{_ML}" y="{_MT - 8}" text-anchor="start">'
        f'{hist.class_label} (gamma={hist.gamma:g})</text>'
    )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def render_svg(spec: DiagramSpec | DatasetHistogram, path: str | Path) -> None:
    """Write the SVG for a diagram or histogram; pure function of its input."""
    if isinstance(spec, DiagramSpec):
        text = diagram_svg(spec)
    elif isinstance(spec, DatasetHistogram):
        text = histogram_svg(spec)
    else:
        raise TypeError(f"cannot render {type(spec).__name__}")
    Path(path).write_bytes(text.encode("utf-8"))
