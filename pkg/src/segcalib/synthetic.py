"""Synthetic 2D blob segmentation datasets with controllable label noise.

Each image is a grid of intensity values: background plus one disc-shaped
blob population per foreground class, each class with its own intensity
level, corrupted by Gaussian intensity noise.  Labels are the clean blob
geometry, optionally corrupted per pixel: with probability rho the stored
label is replaced by a uniform draw over all classes.  Under that noise
the best achievable confidence is bounded away from 1 — the posterior of
the most likely label is at most 1 - rho + rho/C — so a calibrated model
must emit soft probabilities.

Generation is fully deterministic given the seed, down to the stored
bytes.  Every image is guaranteed to contain every class unless a
missing-class fraction is requested explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .volume_io import write_manifest, write_volume


@dataclass
class SyntheticConfig:
    size: int = 64
    num_classes: int = 2            # including background
    blob_count: tuple[int, int] = (1, 3)      # inclusive range per class
    blob_radius: tuple[float, float] = (6.0, 13.0)
    radius_scale: tuple[float, ...] | None = None  # per-foreground-class factor
    levels: tuple[float, ...] | None = None        # per-class mean intensity
    label_noise: float = 0.0        # rho: per-pixel uniform relabel probability
    intensity_noise: float = 0.08
    num_train: int = 16
    num_val: int = 4
    num_test: int = 8
    missing_fraction: float = 0.0   # fraction of images dropping one fg class
    seed: int = 0

    def __post_init__(self):
        if self.size < 8:
            raise ValueError(f"image size {self.size} too small")
        if not 2 <= self.num_classes <= 3:
            raise ValueError(f"num_classes must be 2 or 3, got {self.num_classes}")
        if not 0.0 <= self.label_noise < 1.0:
            raise ValueError(f"label_noise must be in [0, 1), got {self.label_noise}")
        if self.radius_scale is not None and len(self.radius_scale) != self.num_classes - 1:
            raise ValueError("radius_scale needs one factor per foreground class")
        if self.levels is not None and len(self.levels) != self.num_classes:
            raise ValueError("levels needs one intensity per class")

    @property
    def class_names(self) -> list[str]:
        return ["background"] + [f"class_{c}" for c in range(1, self.num_classes)]


def intensity_levels(cfg: SyntheticConfig) -> np.ndarray:
    """Mean intensity per class; separated well beyond the noise scale
    unless overridden in the config."""
    if cfg.levels is not None:
        return np.asarray(cfg.levels, dtype=np.float64)
    if cfg.num_classes == 2:
        return np.array([0.15, 0.75])
    return np.array([0.15, 0.55, 0.9])


def bayes_max_confidence(cfg: SyntheticConfig) -> float:
    """Upper bound on the optimal predicted probability of any label.

    With probability rho the stored label is a uniform class draw, so even
    with the clean geometry known the best posterior for the most likely
    label is (1 - rho) + rho / C.
    """
    return 1.0 - cfg.label_noise + cfg.label_noise / cfg.num_classes


@dataclass
class SyntheticCase:
    case_id: str
    image: np.ndarray        # (H, W) float32
    label: np.ndarray        # (H, W) uint8, noise applied
    clean_label: np.ndarray  # (H, W) uint8, geometry only


@dataclass
class SyntheticDataset:
    config: SyntheticConfig
    train: list[SyntheticCase] = field(default_factory=list)
    val: list[SyntheticCase] = field(default_factory=list)
    test: list[SyntheticCase] = field(default_factory=list)

    def split(self, name: str) -> list[SyntheticCase]:
        if name not in ("train", "val", "test"):
            raise ValueError(f"unknown split '{name}'")
        return getattr(self, name)


def _stamp_blob(label: np.ndarray, cy: float, cx: float, radius: float, value: int) -> None:
    h, w = label.shape
    yy, xx = np.ogrid[:h, :w]
    label[(yy - cy) ** 2 + (xx - cx) ** 2 <= radius**2] = value


def _class_radius(cfg: SyntheticConfig, c: int, rng: np.random.Generator) -> float:
    r_lo, r_hi = cfg.blob_radius
    scale = cfg.radius_scale[c - 1] if cfg.radius_scale is not None else 1.0
    return max(rng.uniform(r_lo, r_hi) * scale, 2.0)


def _make_case(cfg: SyntheticConfig, rng: np.random.Generator, case_id: str, drop_class: int | None) -> SyntheticCase:
    h = w = cfg.size
    clean = np.zeros((h, w), dtype=np.uint8)
    lo, hi = cfg.blob_count
    for c in range(1, cfg.num_classes):
        if c == drop_class:
            continue
        for _ in range(int(rng.integers(lo, hi + 1))):
            radius = _class_radius(cfg, c, rng)
            cy = rng.uniform(radius, h - radius)
            cx = rng.uniform(radius, w - radius)
            _stamp_blob(clean, cy, cx, radius, c)
    # Later classes can overwrite earlier ones entirely; guarantee presence.
    for c in range(1, cfg.num_classes):
        if c == drop_class or (clean == c).any():
            continue
        radius = _class_radius(cfg, c, rng)
        cy = rng.uniform(radius, h - radius)
        cx = rng.uniform(radius, w - radius)
        _stamp_blob(clean, cy, cx, radius, c)

    levels = intensity_levels(cfg)
    image = levels[clean] + rng.normal(0.0, cfg.intensity_noise, size=(h, w))
    label = clean.copy()
    if cfg.label_noise > 0:
        flip = rng.random((h, w)) < cfg.label_noise
        label[flip] = rng.integers(0, cfg.num_classes, size=int(flip.sum()), dtype=np.uint8)
    return SyntheticCase(case_id, image.astype(np.float32), label, clean)


def _make_split(cfg: SyntheticConfig, rng: np.random.Generator, name: str, count: int) -> list[SyntheticCase]:
    cases = []
    for i in range(count):
        drop = None
        if cfg.missing_fraction > 0 and cfg.num_classes > 2 and rng.random() < cfg.missing_fraction:
            drop = int(rng.integers(1, cfg.num_classes))
        cases.append(_make_case(cfg, rng, f"{name}_{i:03d}", drop))
    return cases


def make_dataset(cfg: SyntheticConfig) -> SyntheticDataset:
    """Generate train/val/test splits deterministically from cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    return SyntheticDataset(
        config=cfg,
        train=_make_split(cfg, rng, "train", cfg.num_train),
        val=_make_split(cfg, rng, "val", cfg.num_val),
        test=_make_split(cfg, rng, "test", cfg.num_test),
    )


def generate_dataset(cfg: SyntheticConfig, out_dir: str | Path) -> dict[str, Path]:
    """Write the dataset to disk: one manifest per split plus volumes.

    Identical config (including seed) produces identical bytes.  Returns
    the manifest path per split.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dataset = make_dataset(cfg)
    manifests: dict[str, Path] = {}
    for split in ("train", "val", "test"):
        split_dir = out / split
        split_dir.mkdir(exist_ok=True)
        entries = []
        for case in dataset.split(split):
            image_rel = f"{split}/{case.case_id}_image.calv"
            label_rel = f"{split}/{case.case_id}_label.calv"
            write_volume(out / image_rel, case.image)
            write_volume(out / label_rel, case.label)
            entries.append({"case_id": case.case_id, "image": image_rel, "label": label_rel})
        manifest_path = out / f"{split}.json"
        write_manifest(
            manifest_path,
            cases=entries,
            classes=cfg.class_names,
            split=split,
        )
        manifests[split] = manifest_path
    return manifests
