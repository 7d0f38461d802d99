"""Desk-scale training rig: four loss configurations and the sensitivity
sweeps over bin count and calibration-loss weight.

Training is full-batch gradient descent on the mean per-image loss with an
optional cosine step-size decay, using the analytic gradients from the
loss module chained through the softmax.  The checkpoint with the best
validation DSC is the one evaluated.  Variants:

    dsc_ce   Dice + cross-entropy (the segmentation baseline)
    ce_only  cross-entropy alone
    hl1      dsc_ce + lambda * hard-binned ACE
    sl1      dsc_ce + lambda * soft-binned ACE

Everything is deterministic given (config, seed): same data, same init,
same reduction order, bitwise-identical weights.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .binning import BinningConfig, Kernel
from .losses import (
    ace_loss,
    composite_loss,
    cross_entropy_loss,
    dice_ce_loss,
    loss_grad_logits,
)
from .model import (
    ToyModel,
    accumulate,
    boundary_max_prob,
    feature_stats,
    hard_dice,
    pixel_features,
    zero_like,
)
from .reliability import (
    CalibrationReport,
    ReliabilityCurve,
    calibration_metrics,
    evaluated_classes,
    finalize,
    macro_report,
    merge,
    micro_report,
    tally_image,
    zero_tally,
)
from .synthetic import SyntheticCase, SyntheticConfig, SyntheticDataset, make_dataset
from .temperature import softmax

VARIANTS = ("dsc_ce", "ce_only", "hl1", "sl1")


def replication_data_config(seed: int = 0, **overrides) -> SyntheticConfig:
    """The reference dataset for the directional replication runs.

    Three classes with rho = 0.2 label noise and enough intensity noise
    that confident predictions are miscalibrated; 16 test images keep the
    macro statistics stable across seeds.
    """
    base = dict(
        size=64,
        num_classes=3,
        blob_count=(1, 3),
        blob_radius=(4.0, 11.0),
        label_noise=0.2,
        intensity_noise=0.22,
        num_train=16,
        num_val=4,
        num_test=16,
        seed=seed,
    )
    base.update(overrides)
    return SyntheticConfig(**base)


def replication_train_config(
    variant: str = "dsc_ce", seed: int = 0, **overrides
) -> TrainConfig:
    """The reference optimizer settings for the replication runs."""
    base = dict(
        variant=variant,
        lam=1.0,
        num_bins=20,
        hidden=16,
        epochs=800,
        lr=5.0,
        seed=seed,
    )
    base.update(overrides)
    return TrainConfig(**base)


@dataclass
class TrainConfig:
    variant: str = "dsc_ce"
    lam: float = 1.0
    num_bins: int = 20          # loss-side bin count (hl1 / sl1)
    hidden: int = 16
    epochs: int = 240
    lr: float = 2.0
    cosine_decay: bool = True
    lr_floor: float = 0.1       # final step size as a fraction of lr
    seed: int = 0
    eval_bins: int = 20         # metric protocol: hard binning, 20 bins

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant '{self.variant}', expected one of {VARIANTS}")
        if self.lam < 0:
            raise ValueError(f"lambda must be nonnegative, got {self.lam}")


@dataclass
class TrainResult:
    config: TrainConfig
    model: ToyModel
    best_epoch: int
    best_val_dsc: float
    history: list[tuple[int, float, float]]   # (epoch, train loss, val DSC)
    test_dsc: float
    macro: CalibrationReport
    micro: CalibrationReport
    boundary_confidence: float


def _image_loss(
    variant: str, lam: float, config: BinningConfig, probs: np.ndarray, labels: np.ndarray
) -> tuple[float, np.ndarray]:
    if variant == "dsc_ce":
        return dice_ce_loss(probs, labels)
    if variant == "ce_only":
        return cross_entropy_loss(probs, labels)
    return composite_loss(probs, labels, lam, config)


def _loss_binning(cfg: TrainConfig) -> BinningConfig:
    kernel = Kernel.SOFT if cfg.variant == "sl1" else Kernel.HARD
    return BinningConfig(num_bins=cfg.num_bins, kernel=kernel)


def _step_size(cfg: TrainConfig, epoch: int) -> float:
    if not cfg.cosine_decay or cfg.epochs <= 1:
        return cfg.lr
    frac = 0.5 * (1.0 + np.cos(np.pi * epoch / (cfg.epochs - 1)))
    return cfg.lr * (cfg.lr_floor + (1.0 - cfg.lr_floor) * frac)


def _val_dsc(model: ToyModel, cases: list[SyntheticCase]) -> float:
    scores = []
    for case in cases:
        probs = model.predict_probs(case.image)
        scores.append(hard_dice(np.argmax(probs, axis=0), case.label, model.num_classes))
    return float(np.nanmean(scores))


def train(dataset: SyntheticDataset, cfg: TrainConfig) -> TrainResult:
    """Train one variant and evaluate the best-validation checkpoint."""
    num_classes = dataset.config.num_classes
    binning = _loss_binning(cfg)
    raw_feats = [pixel_features(case.image) for case in dataset.train]
    model = ToyModel.init(num_classes, cfg.hidden, cfg.seed, feature_stats(raw_feats))
    feats = [model.standardize(f) for f in raw_feats]
    shape = (num_classes, dataset.config.size, dataset.config.size)
    k = len(dataset.train)

    best = model.copy()
    best_dsc = -1.0
    best_epoch = -1
    history: list[tuple[int, float, float]] = []
    for epoch in range(cfg.epochs):
        grad = zero_like(model)
        loss_total = 0.0
        for case, f in zip(dataset.train, feats):
            logits, hidden_act = model.forward(f)
            probs = softmax(logits, axis=0)
            value, grad_probs = _image_loss(
                cfg.variant, cfg.lam, binning, probs.reshape(shape), case.label
            )
            g_logits = loss_grad_logits(grad_probs.reshape(num_classes, -1), probs)
            accumulate(grad, model.backward(f, hidden_act, g_logits), 1.0 / k)
            loss_total += value / k
        if not np.isfinite(loss_total):
            raise RuntimeError(
                f"training diverged: non-finite loss at epoch {epoch} "
                f"(variant={cfg.variant}, lam={cfg.lam}, lr={cfg.lr}, seed={cfg.seed})"
            )
        model.add_scaled(grad, -_step_size(cfg, epoch))
        if not model.is_finite():
            raise RuntimeError(
                f"training diverged: non-finite weights after epoch {epoch} "
                f"(variant={cfg.variant}, lam={cfg.lam}, lr={cfg.lr}, seed={cfg.seed})"
            )
        val = _val_dsc(model, dataset.val)
        history.append((epoch, loss_total, val))
        if val > best_dsc:
            best_dsc = val
            best_epoch = epoch
            best = model.copy()

    dsc, macro, micro, boundary, _ = evaluate(best, dataset.test, cfg.eval_bins)
    return TrainResult(
        config=cfg,
        model=best,
        best_epoch=best_epoch,
        best_val_dsc=best_dsc,
        history=history,
        test_dsc=dsc,
        macro=macro,
        micro=micro,
        boundary_confidence=boundary,
    )


def evaluate(
    model: ToyModel,
    cases: list[SyntheticCase],
    eval_bins: int = 20,
) -> tuple[float, CalibrationReport, CalibrationReport, float, list[ReliabilityCurve]]:
    """Test-protocol evaluation of a model on a list of cases.

    Returns (mean DSC, macro report, micro report, mean boundary
    max-probability, per-image curves).  Metrics use hard binning and
    exclude the background channel.  The boundary mask comes from the
    clean geometry so label noise does not scatter it.
    """
    config = BinningConfig(num_bins=eval_bins, kernel=Kernel.HARD)
    num_classes = model.num_classes
    dscs = []
    boundary = []
    reports = []
    curves = []
    total = zero_tally(num_classes, config)
    for case in cases:
        probs = model.predict_probs(case.image)
        dscs.append(hard_dice(np.argmax(probs, axis=0), case.label, num_classes))
        boundary.append(boundary_max_prob(probs, case.clean_label))
        tally = tally_image(probs, case.label, config)
        total = merge(total, tally)
        curve = finalize(tally)
        curves.append(curve)
        reports.append(
            calibration_metrics(curve, evaluated_classes(tally.present_classes()))
        )
    macro = macro_report(reports)
    micro = micro_report(total, evaluated_classes(total.present_classes()))
    return (
        float(np.nanmean(dscs)),
        macro,
        micro,
        float(np.nanmean(boundary)),
        curves,
    )


@dataclass
class SweepCell:
    variant: str
    dimension: str
    value: float
    seed: int
    dsc: float
    macro_ace: float
    micro_ace: float
    macro_ece: float
    macro_mce: float


@dataclass
class SweepResult:
    dimension: str
    cells: list[SweepCell] = field(default_factory=list)

    def values(self) -> list[float]:
        seen: list[float] = []
        for cell in self.cells:
            if cell.value not in seen:
                seen.append(cell.value)
        return seen

    def mean_over_seeds(self, variant: str, metric: str) -> dict[float, float]:
        by_value: dict[float, list[float]] = {}
        for cell in self.cells:
            if cell.variant == variant:
                by_value.setdefault(cell.value, []).append(getattr(cell, metric))
        return {v: float(np.mean(xs)) for v, xs in by_value.items()}


def sweep(
    data_cfg: SyntheticConfig,
    dimension: str,
    values: list[float],
    *,
    variants: tuple[str, ...] = ("hl1", "sl1"),
    seeds: tuple[int, ...] = (0, 1, 2),
    base: TrainConfig | None = None,
) -> SweepResult:
    """One train run per (variant, value, seed).

    dimension "bins" varies the loss-side bin count; "lambda" varies the
    calibration-loss weight.  Each seed gets its own dataset and its own
    model initialization.
    """
    if dimension not in ("bins", "lambda"):
        raise ValueError(f"unknown sweep dimension '{dimension}'")
    if not values:
        raise ValueError("sweep needs at least one value")
    base = base or TrainConfig()
    datasets = {}
    for seed in seeds:
        cfg = SyntheticConfig(**{**data_cfg.__dict__, "seed": seed})
        datasets[seed] = make_dataset(cfg)
    result = SweepResult(dimension=dimension)
    for variant in variants:
        for value in values:
            for seed in seeds:
                cfg = TrainConfig(**{
                    **base.__dict__,
                    "variant": variant,
                    "seed": seed,
                    **({"num_bins": int(value)} if dimension == "bins" else {"lam": float(value)}),
                })
                run = train(datasets[seed], cfg)
                result.cells.append(SweepCell(
                    variant=variant,
                    dimension=dimension,
                    value=float(value),
                    seed=seed,
                    dsc=run.test_dsc,
                    macro_ace=run.macro.mean_ace,
                    micro_ace=run.micro.mean_ace,
                    macro_ece=run.macro.mean_ece,
                    macro_mce=run.macro.mean_mce,
                ))
    return result


def write_sweep_csv(path: str | Path, result: SweepResult) -> None:
    """Columns: variant,dimension,value,seed,dsc,macro_ace,micro_ace,macro_ece,macro_mce."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "variant", "dimension", "value", "seed",
            "dsc", "macro_ace", "micro_ace", "macro_ece", "macro_mce",
        ])
        for cell in result.cells:
            writer.writerow([
                cell.variant, cell.dimension, repr(cell.value), cell.seed,
                repr(cell.dsc), repr(cell.macro_ace), repr(cell.micro_ace),
                repr(cell.macro_ece), repr(cell.macro_mce),
            ])
