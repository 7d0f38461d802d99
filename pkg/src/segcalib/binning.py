"""Uniform probability binning and the square / triangular membership kernels.

Bins partition [0, 1] into M equal intervals with boundaries b_k = k/M and
centres at (b_{m} + b_{m+1}) / 2.  Bin indices are 0-based throughout.  The
hard kernel assigns each probability to exactly one bin (half-open intervals,
last bin closed at 1).  The soft kernel is a triangular window of half-width
1/M around each bin centre, clamped to 1 below the first centre and above the
last, so the kernels form a partition of unity on [0, 1].
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Kernel(enum.Enum):
    HARD = "hard"
    SOFT = "soft"


def _as_kernel(kernel: "Kernel | str") -> Kernel:
    if isinstance(kernel, Kernel):
        return kernel
    return Kernel(str(kernel).lower())


@dataclass(frozen=True)
class BinningConfig:
    """Bin count and kernel choice. Boundaries are always the uniform k/M grid."""

    num_bins: int
    kernel: Kernel = Kernel.HARD

    def __post_init__(self) -> None:
        if int(self.num_bins) != self.num_bins or self.num_bins < 1:
            raise ValueError(f"num_bins must be a positive integer, got {self.num_bins!r}")
        object.__setattr__(self, "num_bins", int(self.num_bins))
        object.__setattr__(self, "kernel", _as_kernel(self.kernel))

    @property
    def boundaries(self) -> np.ndarray:
        return bin_boundaries(self)

    @property
    def centres(self) -> np.ndarray:
        b = bin_boundaries(self)
        return (b[:-1] + b[1:]) * 0.5


def bin_boundaries(config: BinningConfig) -> np.ndarray:
    """The M+1 boundaries [0, 1/M, ..., 1]."""
    m = config.num_bins
    return np.arange(m + 1, dtype=np.float64) / m


def _check_probability(x: np.ndarray) -> None:
    if x.size and (np.min(x) < 0.0 or np.max(x) > 1.0):
        bad = x[(x < 0.0) | (x > 1.0)]
        raise ValueError(f"probabilities must lie in [0, 1]; offending value {bad.flat[0]!r}")


def _check_bin(m: int, num_bins: int) -> None:
    if not 0 <= m < num_bins:
        raise ValueError(f"bin index {m} out of range for {num_bins} bins")


def hard_bin_index(x: np.ndarray, num_bins: int) -> np.ndarray:
    """0-based bin assignment under the square kernel.

    x in [b_m, b_{m+1}) maps to bin m; the last bin is closed so x == 1.0
    maps to bin M-1.  Assignment is by comparison against the exact k/M
    boundary values, not by flooring x*M, so it agrees bitwise with a
    per-boundary scan.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_probability(x)
    b = np.arange(num_bins + 1, dtype=np.float64) / num_bins
    idx = np.searchsorted(b, x, side="right") - 1
    return np.minimum(idx, num_bins - 1)


def membership_hard(x, m: int, num_bins: int):
    """Square-kernel weight of probability x in bin m (0-based): 0 or 1."""
    _check_bin(m, num_bins)
    arr = np.asarray(x, dtype=np.float64)
    w = (hard_bin_index(arr, num_bins) == m).astype(np.float64)
    return w if arr.ndim else float(w)


def _soft_weight(x: np.ndarray, j: np.ndarray, num_bins: int, centres: np.ndarray) -> np.ndarray:
    """Triangular-kernel weight for bin index array j (no input validation)."""
    m = num_bins
    c = centres[j]
    tri = 1.0 - m * np.abs(x - c)
    # Support is [centre_{j-1}, centre_{j+1}]; out-of-range neighbours never bind
    # because x is confined to [0, 1].
    lo = centres[np.maximum(j - 1, 0)]
    hi = centres[np.minimum(j + 1, m - 1)]
    in_support = np.where(j == 0, x <= hi, np.where(j == m - 1, x >= lo, (x >= lo) & (x <= hi)))
    w = np.where(in_support, tri, 0.0)
    # Clamped edge regions win over the triangle: weight 1 below the first
    # centre for bin 0 and above the last centre for bin M-1.
    w = np.where((j == 0) & (x < centres[0]), 1.0, w)
    w = np.where((j == m - 1) & (x > centres[m - 1]), 1.0, w)
    return w


def membership_soft(x, m: int, num_bins: int):
    """Triangular-kernel weight of probability x in bin m (0-based).

    Peaks at 1 on the bin centre, decays linearly to 0 at the adjacent
    centres, equals 0.5 on the bin edges, and is clamped to 1 on the edge
    regions below the first centre (bin 0) and above the last (bin M-1).
    """
    _check_bin(m, num_bins)
    arr = np.asarray(x, dtype=np.float64)
    _check_probability(arr)
    b = np.arange(num_bins + 1, dtype=np.float64) / num_bins
    centres = (b[:-1] + b[1:]) * 0.5
    w = _soft_weight(arr, np.full(arr.shape, m, dtype=np.intp), num_bins, centres)
    return w if arr.ndim else float(w)


def _soft_derivative(x: np.ndarray, j: np.ndarray, num_bins: int, centres: np.ndarray) -> np.ndarray:
    """d/dx of the triangular weight, kink convention: 0 at peak and support ends."""
    m = num_bins
    c = centres[j]
    lo = centres[np.maximum(j - 1, 0)]
    hi = centres[np.minimum(j + 1, m - 1)]
    rising = (j >= 1) & (x > lo) & (x < c)
    falling = (j <= m - 2) & (x > c) & (x < hi)
    return np.where(rising, float(m), 0.0) + np.where(falling, -float(m), 0.0)


def membership_soft_derivative(x, m: int, num_bins: int):
    """Derivative of membership_soft w.r.t. x.

    +M on the rising flank, -M on the falling flank, 0 elsewhere.  At the
    peak and at the support endpoints (kinks) the value is 0; the clamped
    edge regions of the first and last bin are flat, so 0 there too.
    """
    _check_bin(m, num_bins)
    arr = np.asarray(x, dtype=np.float64)
    _check_probability(arr)
    b = np.arange(num_bins + 1, dtype=np.float64) / num_bins
    centres = (b[:-1] + b[1:]) * 0.5
    d = _soft_derivative(arr, np.full(arr.shape, m, dtype=np.intp), num_bins, centres)
    return d if arr.ndim else float(d)


def soft_bin_pairs(x: np.ndarray, num_bins: int):
    """Sparse soft-kernel evaluation: each probability touches at most two bins.

    Returns (j_lo, j_hi, w_lo, w_hi, d_lo, d_hi) where j_lo/j_hi are the two
    candidate 0-based bin indices (equal at the edges, in which case the hi
    weight and derivative are zeroed), w the triangular weights and d their
    derivatives.  Column sums of w reproduce the dense per-bin weights.

    floor(x*M - 0.5) brackets x between two consecutive bin centres, which
    collapses the general support logic to comparisons against those two
    centres; the weight expression itself is the same triangle as
    membership_soft, so the two agree exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    _check_probability(x)
    m = num_bins
    b = np.arange(m + 1, dtype=np.float64) / m
    centres = (b[:-1] + b[1:]) * 0.5
    j_raw = np.floor(x * m - 0.5).astype(np.intp)
    j_lo = np.clip(j_raw, 0, m - 1)
    j_hi = np.clip(j_raw + 1, 0, m - 1)
    c_lo = centres[j_lo]
    c_hi = centres[j_hi]
    distinct = j_hi != j_lo

    w_lo = 1.0 - m * np.abs(x - c_lo)
    clamp = ((j_lo == 0) & (x < centres[0])) | ((j_lo == m - 1) & (x > centres[m - 1]))
    w_lo = np.where(clamp, 1.0, w_lo)
    w_hi = np.where(distinct, 1.0 - m * np.abs(x - c_hi), 0.0)

    d_lo = np.where((x < c_lo) & (j_lo >= 1), float(m), 0.0) + np.where(
        (x > c_lo) & (j_lo <= m - 2), -float(m), 0.0
    )
    d_hi = np.where(distinct & (x > c_lo) & (x < c_hi), float(m), 0.0)

    # The rounded product x*m can misbracket x by one bin when x sits within an
    # ulp of a bin centre; fall back to the general helpers at those sites so
    # the support masks match membership_soft exactly.
    bad = distinct & ((x < c_lo) | (x >= c_hi))
    if np.any(bad):
        xb = x[bad]
        w_lo[bad] = _soft_weight(xb, j_lo[bad], m, centres)
        d_lo[bad] = _soft_derivative(xb, j_lo[bad], m, centres)
        w_hi[bad] = _soft_weight(xb, j_hi[bad], m, centres)
        d_hi[bad] = _soft_derivative(xb, j_hi[bad], m, centres)
    return j_lo, j_hi, w_lo, w_hi, d_lo, d_hi
