"""Naive reference implementations used to cross-check the fast paths.

Everything here is written as plain scalar loops, independent of the
vectorized code under test, so agreement is meaningful.
"""

import numpy as np


def hard_weight_scalar(x: float, m: int, num_bins: int) -> float:
    """Square-kernel weight: bin m covers [m/M, (m+1)/M), last bin closed."""
    lo = m / num_bins
    hi = (m + 1) / num_bins
    if m == num_bins - 1:
        return 1.0 if lo <= x <= 1.0 else 0.0
    return 1.0 if lo <= x < hi else 0.0


def _centres(num_bins: int) -> list:
    """Bin centres as boundary midpoints, matching the binning convention."""
    return [
        (j / num_bins + (j + 1) / num_bins) * 0.5 for j in range(num_bins)
    ]


def soft_weight_scalar(x: float, m: int, num_bins: int) -> float:
    """Triangular-kernel weight: peak 1 at the bin centre, zero at the
    adjacent centres, clamped to 1 outside the first/last centre."""
    centres = _centres(num_bins)
    if m == 0 and x < centres[0]:
        return 1.0
    if m == num_bins - 1 and x > centres[-1]:
        return 1.0
    c = centres[m]
    if m >= 1 and x < centres[m - 1]:
        return 0.0
    if m <= num_bins - 2 and x > centres[m + 1]:
        return 0.0
    return 1.0 - num_bins * abs(x - c)


def soft_derivative_scalar(x: float, m: int, num_bins: int) -> float:
    """Derivative of soft_weight_scalar: +M rising, -M falling, 0 at kinks
    and inside the clamp regions."""
    centres = _centres(num_bins)
    if m >= 1 and centres[m - 1] < x < centres[m]:
        return float(num_bins)
    if m <= num_bins - 2 and centres[m] < x < centres[m + 1]:
        return -float(num_bins)
    return 0.0


def weight_scalar(x: float, m: int, num_bins: int, soft: bool) -> float:
    return (
        soft_weight_scalar(x, m, num_bins)
        if soft
        else hard_weight_scalar(x, m, num_bins)
    )


def brute_force_curve(x, y, num_bins: int, soft: bool):
    """Triple-loop tally and finalize.

    x, y: (C, N) probabilities and 0/1 indicators.  Returns (e, o, n, empty)
    arrays of shape (C, M): per-bin mean predicted probability, observed
    frequency, total membership mass, and the empty-bin flag.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    num_classes, num_voxels = x.shape
    e = np.zeros((num_classes, num_bins))
    o = np.zeros((num_classes, num_bins))
    n = np.zeros((num_classes, num_bins))
    empty = np.zeros((num_classes, num_bins), dtype=bool)
    for c in range(num_classes):
        for m in range(num_bins):
            sw = swx = swy = 0.0
            for i in range(num_voxels):
                w = weight_scalar(float(x[c, i]), m, num_bins, soft)
                sw += w
                swx += w * float(x[c, i])
                swy += w * float(y[c, i])
            if sw > 0.0:
                e[c, m] = swx / sw
                o[c, m] = swy / sw
                n[c, m] = sw
            else:
                empty[c, m] = True
    return e, o, n, empty


def brute_force_metrics(e, o, n, empty):
    """Per-class ACE/ECE/MCE from a finalized curve, by explicit loop."""
    num_classes, num_bins = e.shape
    ace = np.zeros(num_classes)
    ece = np.zeros(num_classes)
    mce = np.zeros(num_classes)
    for c in range(num_classes):
        total = float(n[c].sum())
        gap_sum = 0.0
        ece_sum = 0.0
        gap_max = 0.0
        for m in range(num_bins):
            if empty[c, m]:
                continue
            gap = abs(float(o[c, m]) - float(e[c, m]))
            gap_sum += gap
            ece_sum += gap * float(n[c, m])
            gap_max = max(gap_max, gap)
        ace[c] = gap_sum / num_bins
        ece[c] = ece_sum / total if total > 0 else 0.0
        mce[c] = gap_max
    return ace, ece, mce


def central_difference(f, x, h=1e-6):
    """Central finite-difference gradient of scalar f at flat float64 x."""
    x = np.asarray(x, dtype=np.float64)
    if not x.flags.c_contiguous:
        x = x.copy()  # reshape(-1) must alias x for the perturbation to land
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        out[i] = (fp - fm) / (2.0 * h)
    return grad


def away_from_soft_kinks(x, num_bins: int, margin: float = 1e-4):
    """Mask of probes at least `margin` from every soft-kernel kink (the bin
    centres) and from the [0, 1] endpoints."""
    x = np.asarray(x, dtype=np.float64)
    centres = (np.arange(num_bins) + 0.5) / num_bins
    dist = np.abs(x[..., None] - centres).min(axis=-1)
    return (dist >= margin) & (x >= margin) & (x <= 1.0 - margin)


def away_from_hard_edges(x, num_bins: int, margin: float = 1e-4):
    """Mask of probes at least `margin` from every hard-bin boundary."""
    x = np.asarray(x, dtype=np.float64)
    edges = np.arange(num_bins + 1) / num_bins
    dist = np.abs(x[..., None] - edges).min(axis=-1)
    return dist >= margin
