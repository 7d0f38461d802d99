"""Differentiable calibration and segmentation losses with analytic gradients.

The binned ACE loss reuses the reliability tallies: its value is the mean
over present classes of (1/M) sum_m |o_m - e_m|.  Under the hard kernel the
backward pass treats bin membership as locally constant, so each voxel in
bin m of class c receives sign(e_m - o_m) / (n_m * C' * M).  Under the soft
kernel e and o depend smoothly on x through the triangular weights:

    de_m/dx_i = (psi_m(x_i) + psi_m'(x_i) * (x_i - e_m)) / S_m
    do_m/dx_i = psi_m'(x_i) * (Y_i - o_m) / S_m

with S_m the total membership mass of bin m, and the loss gradient chains
through sign(o_m - e_m).  sign(0) = 0 in both kernels, so exactly calibrated
bins emit no gradient.  Classes with no ground-truth foreground contribute
zero value and zero gradient; the normalizer C' counts only present classes.

The Dice + cross-entropy baseline and the DSC + CE + lambda * ACE composite
live here too, plus the softmax chain rule for pushing probability-space
gradients back to logits.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .binning import BinningConfig, Kernel, hard_bin_index, soft_bin_pairs
from .reliability import ReliabilityTally, ShapeError, _flatten_inputs, finalize

CE_CLAMP = 1e-7
DICE_SMOOTH = 1.0


@dataclass
class AceLossCache:
    """Everything the backward pass needs, recorded during forward."""

    config: BinningConfig
    shape: tuple            # original probs shape
    channels: np.ndarray    # evaluated (present and included) channel indices
    num_eval: int           # C'
    e: np.ndarray           # (C, M) from the full-stack curve
    o: np.ndarray
    n: np.ndarray           # bin mass (hard: counts, soft: sum of weights)
    empty: np.ndarray
    x: np.ndarray           # (C, N)
    y: np.ndarray           # (C, N)
    hard_idx: np.ndarray | None = None      # (C, N) bin of each voxel
    soft_pairs: dict | None = None          # per-channel sparse memberships


@dataclass
class LossOutput:
    value: float
    cache: AceLossCache


def _resolve_channels(
    num_classes: int, include_background: bool | None, background_index: int = 0
) -> np.ndarray:
    """Channels the calibration/Dice terms run over.

    Default excludes the background channel for multi-class stacks; a
    single-channel (marginal foreground) input is always included.
    """
    if include_background is None:
        include_background = num_classes == 1
    if include_background:
        return np.ones(num_classes, dtype=bool)
    mask = np.ones(num_classes, dtype=bool)
    mask[background_index] = False
    return mask


def ace_loss_forward(
    probs: np.ndarray,
    labels: np.ndarray,
    config: BinningConfig,
    *,
    include_background: bool | None = None,
    marginal: bool = False,
) -> LossOutput:
    """Forward pass of the binned ACE loss.

    value = (1 / (C' * M)) * sum over present included classes and bins of
    |o - e|, where C' is the number of present included classes.  Equals the
    per-image macro ACE of the reliability module restricted to those
    classes.
    """
    probs = np.asarray(probs, dtype=np.float64)
    x, y = _flatten_inputs(probs, labels, marginal or probs.shape[0] == 1)
    c, n_vox = x.shape
    m = config.num_bins
    include = _resolve_channels(c, include_background)
    present = y.sum(axis=1) > 0
    eval_mask = include & present
    channels = np.flatnonzero(eval_mask)

    # Tally only the evaluated channels, keeping the memberships around
    # for the backward pass.  The per-bin arithmetic is shared with the
    # reliability module through finalize, so the value matches the
    # metric path exactly.
    sum_w = np.zeros((c, m))
    sum_wx = np.zeros((c, m))
    sum_wy = np.zeros((c, m))
    hard_idx: np.ndarray | None = None
    soft_pairs: dict | None = None
    if config.kernel is Kernel.HARD:
        hard_idx = np.zeros_like(x, dtype=np.intp)
        for ci in channels:
            idx = hard_bin_index(x[ci], m)
            hard_idx[ci] = idx
            sum_w[ci] = np.bincount(idx, minlength=m)
            sum_wx[ci] = np.bincount(idx, weights=x[ci], minlength=m)
            sum_wy[ci] = np.bincount(idx, weights=y[ci], minlength=m)
    else:
        soft_pairs = {}
        for ci in channels:
            pairs = soft_bin_pairs(x[ci], m)
            soft_pairs[int(ci)] = pairs
            j_lo, j_hi, w_lo, w_hi, _, _ = pairs
            sum_w[ci] = np.bincount(j_lo, weights=w_lo, minlength=m) + np.bincount(
                j_hi, weights=w_hi, minlength=m
            )
            sum_wx[ci] = np.bincount(j_lo, weights=w_lo * x[ci], minlength=m) + np.bincount(
                j_hi, weights=w_hi * x[ci], minlength=m
            )
            sum_wy[ci] = np.bincount(j_lo, weights=w_lo * y[ci], minlength=m) + np.bincount(
                j_hi, weights=w_hi * y[ci], minlength=m
            )
    curve = finalize(ReliabilityTally(config, sum_w, sum_wx, sum_wy, n_vox, 1))
    cache = AceLossCache(
        config=config,
        shape=probs.shape,
        channels=channels,
        num_eval=len(channels),
        e=curve.e,
        o=curve.o,
        n=curve.n,
        empty=curve.empty,
        x=x,
        y=y,
        hard_idx=hard_idx,
        soft_pairs=soft_pairs,
    )
    if len(channels) == 0:
        return LossOutput(0.0, cache)
    gap = np.where(curve.empty, 0.0, np.abs(curve.o - curve.e))
    value = float(gap[channels].sum() / (len(channels) * m))
    return LossOutput(value, cache)


def ace_loss_backward(cache: AceLossCache) -> np.ndarray:
    """Gradient of the ACE loss w.r.t. the probabilities, original shape."""
    grad = np.zeros_like(cache.x)
    if cache.num_eval == 0:
        return grad.reshape(cache.shape)
    m = cache.config.num_bins
    scale = 1.0 / (cache.num_eval * m)
    if cache.config.kernel is Kernel.HARD:
        if cache.hard_idx is None:
            raise ValueError("cache does not match a hard-kernel forward call")
        # Per bin: sign(e - o) / n, zero on empty and exactly calibrated bins.
        coeff = np.where(
            cache.empty, 0.0, np.sign(cache.e - cache.o) / np.where(cache.empty, 1.0, cache.n)
        )
        for ci in cache.channels:
            grad[ci] = scale * coeff[ci][cache.hard_idx[ci]]
    else:
        if cache.soft_pairs is None:
            raise ValueError("cache does not match a soft-kernel forward call")
        for ci in cache.channels:
            j_lo, j_hi, w_lo, w_hi, d_lo, d_hi = cache.soft_pairs[int(ci)]
            s = np.where(cache.empty[ci], 1.0, cache.n[ci])
            a = np.where(cache.empty[ci], 0.0, np.sign(cache.o[ci] - cache.e[ci]) / s)
            x = cache.x[ci]
            yv = cache.y[ci]
            g = np.zeros_like(x)
            for j, w, d in ((j_lo, w_lo, d_lo), (j_hi, w_hi, d_hi)):
                aj = a[j]
                g += aj * (d * (yv - cache.o[ci][j]) - w - d * (x - cache.e[ci][j]))
            grad[ci] = scale * g
    return grad.reshape(cache.shape)


def ace_loss(
    probs: np.ndarray,
    labels: np.ndarray,
    config: BinningConfig,
    *,
    include_background: bool | None = None,
    marginal: bool = False,
) -> tuple[float, np.ndarray]:
    """Forward and backward in one call: (value, grad_probs)."""
    out = ace_loss_forward(
        probs, labels, config, include_background=include_background, marginal=marginal
    )
    return out.value, ace_loss_backward(out.cache)


def _index_labels(labels: np.ndarray, num_classes: int, spatial: tuple) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.shape == spatial:
        if not np.issubdtype(labels.dtype, np.integer):
            raise ShapeError("index labels must have an integer dtype")
        return labels.reshape(-1)
    if labels.shape == (num_classes,) + spatial:
        y = labels.reshape(num_classes, -1)
        if not np.all(y.sum(axis=0) == 1):
            raise ShapeError("one-hot labels must select exactly one class per voxel")
        return np.argmax(y, axis=0)
    raise ShapeError(f"labels shape {labels.shape} incompatible with spatial {spatial}")


def dice_ce_loss(
    probs: np.ndarray,
    labels: np.ndarray,
    *,
    include_background: bool | None = None,
) -> tuple[float, np.ndarray]:
    """Soft-Dice plus voxel-mean cross-entropy, summed 1:1, with gradients.

    Dice per class is 1 - (2*sum(p*g) + s) / (sum(p) + sum(g) + s) with
    smoothing s = 1, averaged over present included classes (skipped
    entirely when none is present).  CE runs over all channels with
    probabilities clamped to [1e-7, 1 - 1e-7] before the log.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim < 2:
        raise ShapeError(f"probs must be (C, *spatial), got {probs.shape}")
    c = probs.shape[0]
    spatial = probs.shape[1:]
    x = probs.reshape(c, -1)
    n = x.shape[1]
    y_idx = _index_labels(labels, c, spatial)
    if y_idx.size and (y_idx.min() < 0 or y_idx.max() >= c):
        raise ShapeError(f"label index {int(y_idx.max())} out of range for {c} classes")
    g = (y_idx[None, :] == np.arange(c)[:, None]).astype(np.float64)

    grad = np.zeros_like(x)
    include = _resolve_channels(c, include_background)
    dice_channels = np.flatnonzero(include & (g.sum(axis=1) > 0))
    dice_value = 0.0
    if len(dice_channels):
        k = len(dice_channels)
        for ci in dice_channels:
            inter = float(x[ci] @ g[ci])
            a = 2.0 * inter + DICE_SMOOTH
            d = float(x[ci].sum() + g[ci].sum()) + DICE_SMOOTH
            dice_value += 1.0 - a / d
            grad[ci] += -(2.0 * g[ci] * d - a) / (d * d) / k
        dice_value /= k

    p_true = x[y_idx, np.arange(n)]
    p_cl = np.clip(p_true, CE_CLAMP, 1.0 - CE_CLAMP)
    ce_value = float(-np.log(p_cl).mean())
    inside = (p_true > CE_CLAMP) & (p_true < 1.0 - CE_CLAMP)
    ce_g = np.where(inside, -1.0 / (n * p_cl), 0.0)
    np.add.at(grad, (y_idx, np.arange(n)), ce_g)

    return dice_value + ce_value, grad.reshape(probs.shape)


def cross_entropy_loss(probs: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Voxel-mean cross-entropy alone (the CE-only training baseline)."""
    probs = np.asarray(probs, dtype=np.float64)
    c = probs.shape[0]
    spatial = probs.shape[1:]
    x = probs.reshape(c, -1)
    n = x.shape[1]
    y_idx = _index_labels(labels, c, spatial)
    p_true = x[y_idx, np.arange(n)]
    p_cl = np.clip(p_true, CE_CLAMP, 1.0 - CE_CLAMP)
    value = float(-np.log(p_cl).mean())
    inside = (p_true > CE_CLAMP) & (p_true < 1.0 - CE_CLAMP)
    grad = np.zeros_like(x)
    grad[y_idx, np.arange(n)] = np.where(inside, -1.0 / (n * p_cl), 0.0)
    return value, grad.reshape(probs.shape)


def composite_loss(
    probs: np.ndarray,
    labels: np.ndarray,
    lam: float,
    config: BinningConfig,
    *,
    include_background: bool | None = None,
) -> tuple[float, np.ndarray]:
    """DSC + CE + lambda * ACE. lambda = 1 is the 1:1:1 default weighting."""
    if lam < 0:
        raise ValueError(f"lambda must be nonnegative, got {lam}")
    value, grad = dice_ce_loss(probs, labels, include_background=include_background)
    if lam > 0:
        a_value, a_grad = ace_loss(
            probs, labels, config, include_background=include_background
        )
        value += lam * a_value
        grad = grad + lam * a_grad
    return value, grad


def loss_grad_logits(grad_probs: np.ndarray, probs: np.ndarray) -> np.ndarray:
    """Chain a probability-space gradient through softmax back to logits.

    grad_z[c] = p[c] * (grad_p[c] - sum_k grad_p[k] * p[k]) per voxel.
    """
    grad_probs = np.asarray(grad_probs, dtype=np.float64)
    probs = np.asarray(probs, dtype=np.float64)
    if grad_probs.shape != probs.shape:
        raise ShapeError(
            f"grad shape {grad_probs.shape} does not match probs {probs.shape}"
        )
    inner = (grad_probs * probs).sum(axis=0, keepdims=True)
    return probs * (grad_probs - inner)
