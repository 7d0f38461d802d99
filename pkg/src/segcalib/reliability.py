"""Reliability tallies, curves, and the marginal L1 calibration metrics.

A tally holds, per (class, bin), the sufficient statistics sum_w = sum of
membership weights, sum_wx = weighted sum of predicted probabilities and
sum_wy = weighted sum of ground-truth indicators.  Tallies merge by
componentwise addition, which is what makes streaming (micro-averaged)
evaluation over a dataset exact: chunk the voxels any way you like, tally
each chunk, merge, finalize once.

Finalizing divides the sums into per-bin expected foreground probability
e = sum_wx / sum_w and observed foreground frequency o = sum_wy / sum_w.
The three metrics are L1 gaps |o - e| aggregated per class:

    ACE = (1/M) * sum_m |o_m - e_m|          (empty bins contribute 0)
    ECE = sum_m (n_m / N) * |o_m - e_m|
    MCE = max_m |o_m - e_m|                  (over populated bins)
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .binning import BinningConfig, Kernel, hard_bin_index, soft_bin_pairs

NORMALIZATION_TOL = 1e-4


class ShapeError(ValueError):
    pass


@dataclass
class ReliabilityTally:
    """Mergeable per-(class, bin) sufficient statistics."""

    config: BinningConfig
    sum_w: np.ndarray   # (C, M)
    sum_wx: np.ndarray  # (C, M)
    sum_wy: np.ndarray  # (C, M)
    num_voxels: int
    num_images: int = 1

    @property
    def num_classes(self) -> int:
        return self.sum_w.shape[0]

    def present_classes(self) -> np.ndarray:
        """Classes with any ground-truth foreground. Exact under the hard
        kernel; under the soft kernel the partition of unity makes the row
        sum equal the foreground count up to rounding, hence the 0.5 cut."""
        return self.sum_wy.sum(axis=1) > 0.5

    def copy(self) -> "ReliabilityTally":
        return replace(
            self,
            sum_w=self.sum_w.copy(),
            sum_wx=self.sum_wx.copy(),
            sum_wy=self.sum_wy.copy(),
        )


@dataclass
class ReliabilityCurve:
    """Finalized per-bin expected probability / observed frequency / mass."""

    config: BinningConfig
    e: np.ndarray       # (C, M)
    o: np.ndarray       # (C, M)
    n: np.ndarray       # (C, M)
    empty: np.ndarray   # (C, M) bool
    num_voxels: int

    @property
    def num_classes(self) -> int:
        return self.e.shape[0]

    def present_classes(self) -> np.ndarray:
        return (self.o * self.n).sum(axis=1) > 0.5


@dataclass
class CalibrationReport:
    """Per-class and class-averaged ACE/ECE/MCE, tagged by averaging mode."""

    averaging: str                  # "image" | "macro" | "micro"
    ace: np.ndarray                 # (C,)
    ece: np.ndarray                 # (C,)
    mce: np.ndarray                 # (C,)
    classes_present: np.ndarray     # (C,) bool
    evaluated: np.ndarray           # (C,) bool, classes entering the average
    mean_ace: float
    mean_ece: float
    mean_mce: float
    defined: bool = True
    dsc: np.ndarray | None = None   # (C,) when attached
    mean_dsc: float | None = None
    std_ace: float | None = None    # macro only: spread across images
    std_ece: float | None = None
    std_mce: float | None = None
    std_dsc: float | None = None
    num_images: int = 1

    def to_dict(self) -> dict:
        d = {
            "averaging": self.averaging,
            "defined": bool(self.defined),
            "num_images": int(self.num_images),
            "per_class": {
                "ace": [float(v) for v in self.ace],
                "ece": [float(v) for v in self.ece],
                "mce": [float(v) for v in self.mce],
                "present": [bool(v) for v in self.classes_present],
                "evaluated": [bool(v) for v in self.evaluated],
            },
            "mean": {
                "ace": float(self.mean_ace),
                "ece": float(self.mean_ece),
                "mce": float(self.mean_mce),
            },
        }
        if self.dsc is not None:
            d["per_class"]["dsc"] = [float(v) for v in self.dsc]
            d["mean"]["dsc"] = float(self.mean_dsc)
        if self.std_ace is not None:
            d["std"] = {
                "ace": float(self.std_ace),
                "ece": float(self.std_ece),
                "mce": float(self.std_mce),
            }
            if self.std_dsc is not None:
                d["std"]["dsc"] = float(self.std_dsc)
        return d


def _flatten_inputs(probs: np.ndarray, labels: np.ndarray, marginal: bool):
    """Validate and flatten to probs (C, N) float64 and labels (C, N) float64
    indicators.  Index labels are expanded per class; mask labels (C, *S) pass
    through.  C == 1 inputs are treated as marginal."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim < 2:
        raise ShapeError(f"probs must be (C, *spatial), got shape {probs.shape}")
    c = probs.shape[0]
    spatial = probs.shape[1:]
    labels = np.asarray(labels)
    if labels.shape == spatial:
        if not np.issubdtype(labels.dtype, np.integer):
            raise ShapeError("index labels must have an integer dtype")
        if labels.size and (labels.min() < 0 or labels.max() >= c):
            raise ShapeError(
                f"label index {int(labels.max())} out of range for {c} classes"
            )
        flat = labels.reshape(-1)
        y = (flat[None, :] == np.arange(c)[:, None]).astype(np.float64)
    elif labels.shape == probs.shape:
        y = np.asarray(labels, dtype=np.float64).reshape(c, -1)
        if y.size and (y.min() < 0 or y.max() > 1):
            raise ShapeError("mask labels must be 0/1 indicators")
    else:
        raise ShapeError(
            f"labels shape {labels.shape} matches neither spatial {spatial} "
            f"nor per-class {probs.shape}"
        )
    x = probs.reshape(c, -1)
    if x.size and (x.min() < 0.0 or x.max() > 1.0):
        raise ValueError("probabilities must lie in [0, 1]")
    if not np.all(np.isfinite(x)):
        raise ValueError("probabilities must be finite")
    if not marginal and c > 1:
        sums = x.sum(axis=0)
        if sums.size and np.max(np.abs(sums - 1.0)) > NORMALIZATION_TOL:
            worst = float(np.max(np.abs(sums - 1.0)))
            raise ValueError(
                f"per-voxel class probabilities must sum to 1 within "
                f"{NORMALIZATION_TOL:g} (worst deviation {worst:.3g}); "
                f"pass marginal=True for non-softmax stacks"
            )
    return x, y


def _tally_core(x: np.ndarray, y: np.ndarray, config: BinningConfig) -> ReliabilityTally:
    """Tally flattened (C, N) probabilities and indicators. No validation."""
    c, n = x.shape
    m = config.num_bins
    sum_w = np.zeros((c, m))
    sum_wx = np.zeros((c, m))
    sum_wy = np.zeros((c, m))
    if config.kernel is Kernel.HARD:
        for ci in range(c):
            idx = hard_bin_index(x[ci], m)
            sum_w[ci] = np.bincount(idx, minlength=m)
            sum_wx[ci] = np.bincount(idx, weights=x[ci], minlength=m)
            sum_wy[ci] = np.bincount(idx, weights=y[ci], minlength=m)
    else:
        for ci in range(c):
            j_lo, j_hi, w_lo, w_hi, _, _ = soft_bin_pairs(x[ci], m)
            sum_w[ci] = np.bincount(j_lo, weights=w_lo, minlength=m) + np.bincount(
                j_hi, weights=w_hi, minlength=m
            )
            sum_wx[ci] = np.bincount(j_lo, weights=w_lo * x[ci], minlength=m) + np.bincount(
                j_hi, weights=w_hi * x[ci], minlength=m
            )
            sum_wy[ci] = np.bincount(j_lo, weights=w_lo * y[ci], minlength=m) + np.bincount(
                j_hi, weights=w_hi * y[ci], minlength=m
            )
    return ReliabilityTally(config, sum_w, sum_wx, sum_wy, num_voxels=n, num_images=1)


def tally_image(
    probs: np.ndarray,
    labels: np.ndarray,
    config: BinningConfig,
    *,
    marginal: bool = False,
) -> ReliabilityTally:
    """Tally one image into per-(class, bin) sufficient statistics.

    probs: (C, *spatial) probabilities.  labels: (*spatial) class indices or
    (C, *spatial) 0/1 masks.  Softmax stacks must be normalized per voxel
    within 1e-4; marginal stacks (HEC composites, single-channel foreground
    studies) skip that check via marginal=True.
    """
    x, y = _flatten_inputs(probs, labels, marginal or np.asarray(probs).shape[0] == 1)
    return _tally_core(x, y, config)


def zero_tally(num_classes: int, config: BinningConfig) -> ReliabilityTally:
    """Identity element for merge."""
    m = config.num_bins
    z = lambda: np.zeros((num_classes, m))
    return ReliabilityTally(config, z(), z(), z(), num_voxels=0, num_images=0)


def merge(a: ReliabilityTally, b: ReliabilityTally) -> ReliabilityTally:
    """Componentwise sum; associative, commutative, identity zero_tally."""
    if a.config != b.config:
        raise ValueError(f"cannot merge tallies with configs {a.config} and {b.config}")
    if a.sum_w.shape != b.sum_w.shape:
        raise ValueError(
            f"cannot merge tallies with {a.num_classes} and {b.num_classes} classes"
        )
    return ReliabilityTally(
        a.config,
        a.sum_w + b.sum_w,
        a.sum_wx + b.sum_wx,
        a.sum_wy + b.sum_wy,
        num_voxels=a.num_voxels + b.num_voxels,
        num_images=a.num_images + b.num_images,
    )


def finalize(tally: ReliabilityTally) -> ReliabilityCurve:
    """Divide out the sums. Empty bins are flagged and carry e = o = n = 0."""
    empty = tally.sum_w <= 0.0
    denom = np.where(empty, 1.0, tally.sum_w)
    e = np.where(empty, 0.0, tally.sum_wx / denom)
    o = np.where(empty, 0.0, tally.sum_wy / denom)
    n = np.where(empty, 0.0, tally.sum_w)
    return ReliabilityCurve(tally.config, e, o, n, empty, tally.num_voxels)


def calibration_metrics(
    curve: ReliabilityCurve,
    classes_present: np.ndarray | None = None,
    *,
    averaging: str = "image",
) -> CalibrationReport:
    """ACE/ECE/MCE per class plus the average over classes_present.

    ACE divides by the full bin count M with empty bins contributing zero
    gap; ECE weights gaps by bin mass; MCE is the worst populated-bin gap.
    classes_present defaults to the ground-truth-foreground mask derived
    from the curve.  All classes absent yields a report flagged undefined.
    """
    m = curve.config.num_bins
    gap = np.where(curve.empty, 0.0, np.abs(curve.o - curve.e))
    ace = gap.sum(axis=1) / m
    n_class = curve.n.sum(axis=1)
    safe_n = np.where(n_class > 0, n_class, 1.0)
    ece = (gap * curve.n).sum(axis=1) / safe_n
    mce = gap.max(axis=1)
    if classes_present is None:
        classes_present = curve.present_classes()
    classes_present = np.asarray(classes_present, dtype=bool)
    if classes_present.shape != (curve.num_classes,):
        raise ShapeError(
            f"classes_present must have shape ({curve.num_classes},), got {classes_present.shape}"
        )
    defined = bool(classes_present.any())
    mean = lambda v: float(v[classes_present].mean()) if defined else float("nan")
    return CalibrationReport(
        averaging=averaging,
        ace=ace,
        ece=ece,
        mce=mce,
        classes_present=classes_present,
        evaluated=classes_present.copy(),
        mean_ace=mean(ace),
        mean_ece=mean(ece),
        mean_mce=mean(mce),
        defined=defined,
    )


def evaluated_classes(
    present: np.ndarray,
    include_background: bool | None = None,
    background_index: int = 0,
) -> np.ndarray:
    """Restrict a class-presence mask by the background-inclusion policy.

    Default: the background channel is dropped from class averages unless
    the stack has a single channel (a marginal foreground probability).
    """
    present = np.asarray(present, dtype=bool).copy()
    c = present.shape[0]
    if include_background is None:
        include_background = c == 1
    if not include_background and c > 1:
        present[background_index] = False
    return present


def image_report(
    probs: np.ndarray,
    labels: np.ndarray,
    config: BinningConfig,
    *,
    marginal: bool = False,
    include_background: bool | None = None,
    classes_present: np.ndarray | None = None,
) -> CalibrationReport:
    """Convenience: tally, finalize and score one image."""
    tally = tally_image(probs, labels, config, marginal=marginal)
    if classes_present is None:
        classes_present = evaluated_classes(tally.present_classes(), include_background)
    return calibration_metrics(finalize(tally), classes_present)


def _masked_mean_std(values: np.ndarray) -> tuple[float, float]:
    values = values[np.isfinite(values)]
    if values.size == 0:
        return float("nan"), float("nan")
    mean = float(values.mean())
    std = float(values.std(ddof=1)) if values.size > 1 else 0.0
    return mean, std


def macro_report(
    per_image_reports: list[CalibrationReport],
    *,
    missing_policy: str = "skip",
) -> CalibrationReport:
    """Average per-image reports over the dataset.

    Per-class values are means over the images where the class is present
    (missing_policy="skip", the default) or over all images ("include").
    The aggregate mean is the average over images of each image's own
    class-averaged metric, with the across-image standard deviation
    attached; this is the Table-1 style mean +/- std.
    """
    if not per_image_reports:
        raise ValueError("macro_report requires at least one per-image report")
    if missing_policy not in ("skip", "include"):
        raise ValueError(f"unknown missing_policy {missing_policy!r}")
    c = per_image_reports[0].ace.shape[0]
    for r in per_image_reports:
        if r.ace.shape[0] != c:
            raise ShapeError("per-image reports disagree on class count")
    k = len(per_image_reports)
    ace = np.stack([r.ace for r in per_image_reports])      # (K, C)
    ece = np.stack([r.ece for r in per_image_reports])
    mce = np.stack([r.mce for r in per_image_reports])
    present = np.stack([r.classes_present for r in per_image_reports])
    use = present if missing_policy == "skip" else np.ones_like(present)
    counts = use.sum(axis=0)
    safe = np.where(counts > 0, counts, 1)
    cls_mean = lambda v: np.where(counts > 0, (v * use).sum(axis=0) / safe, 0.0)

    per_image_mean = np.full((k, 3), np.nan)
    dsc_rows = np.full(k, np.nan)
    have_dsc = all(r.dsc is not None for r in per_image_reports)
    for i, r in enumerate(per_image_reports):
        sel = use[i]
        if sel.any():
            per_image_mean[i] = [ace[i][sel].mean(), ece[i][sel].mean(), mce[i][sel].mean()]
            if have_dsc:
                dsc_rows[i] = r.dsc[sel].mean()
    mean_ace, std_ace = _masked_mean_std(per_image_mean[:, 0])
    mean_ece, std_ece = _masked_mean_std(per_image_mean[:, 1])
    mean_mce, std_mce = _masked_mean_std(per_image_mean[:, 2])

    report = CalibrationReport(
        averaging="macro",
        ace=cls_mean(ace),
        ece=cls_mean(ece),
        mce=cls_mean(mce),
        classes_present=present.any(axis=0),
        evaluated=counts > 0,
        mean_ace=mean_ace,
        mean_ece=mean_ece,
        mean_mce=mean_mce,
        defined=bool(np.isfinite(mean_ace)),
        std_ace=std_ace,
        std_ece=std_ece,
        std_mce=std_mce,
        num_images=k,
    )
    if have_dsc:
        dsc = np.stack([r.dsc for r in per_image_reports])
        report.dsc = cls_mean(dsc)
        report.mean_dsc, report.std_dsc = _masked_mean_std(dsc_rows)
    return report


def micro_report(
    dataset_tally: ReliabilityTally,
    classes_present: np.ndarray | None = None,
) -> CalibrationReport:
    """Finalize the merged dataset tally and score it once."""
    report = calibration_metrics(
        finalize(dataset_tally), classes_present, averaging="micro"
    )
    report.num_images = dataset_tally.num_images
    return report


def compose_hierarchical_classes(
    probs: np.ndarray,
    labels: np.ndarray,
    hec_map: dict[str, list[int]],
) -> tuple[np.ndarray, np.ndarray]:
    """Build composite-class marginal volumes from a class-grouping map.

    Each output class is the union of its member input classes: foreground
    probability is the clamped sum of member probabilities, the label mask is
    the logical OR of member masks.  Groups may overlap (nested composites).
    Returns (probs_hec, labels_hec) with shape (K, *spatial); these stacks are
    marginal, not softmax-normalized.
    """
    probs = np.asarray(probs, dtype=np.float64)
    c = probs.shape[0]
    spatial = probs.shape[1:]
    labels = np.asarray(labels)
    if labels.shape == spatial:
        masks = labels[None, ...] == np.arange(c).reshape((c,) + (1,) * len(spatial))
    elif labels.shape == probs.shape:
        masks = np.asarray(labels, dtype=bool)
    else:
        raise ShapeError(f"labels shape {labels.shape} incompatible with probs {probs.shape}")
    if not hec_map:
        raise ValueError("hec_map must name at least one composite class")
    out_p = np.zeros((len(hec_map),) + spatial)
    out_y = np.zeros((len(hec_map),) + spatial, dtype=np.uint8)
    for k, (name, members) in enumerate(hec_map.items()):
        if not members:
            raise ValueError(f"composite class {name!r} has no members")
        for ci in members:
            if not 0 <= ci < c:
                raise ValueError(
                    f"composite class {name!r} references unknown input class {ci}"
                )
        out_p[k] = np.clip(probs[list(members)].sum(axis=0), 0.0, 1.0)
        out_y[k] = masks[list(members)].any(axis=0)
    return out_p, out_y
