"""A tiny pixelwise segmentation model with exact manual gradients.

Each pixel is classified independently from five fixed local features:
raw intensity, 3x3 box mean, 3x3 box variance, and the two normalized
coordinates.  A two-layer tanh network maps features to class logits:

    logits = W2 @ tanh(W1 @ f + b1) + b2

Small enough that full-batch gradient descent with hand-derived
backpropagation is exact and fast, yet expressive enough to overfit the
blob geometry and to exhibit overconfidence when trained with Dice.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .temperature import softmax

NUM_FEATURES = 5


def box_stats(image: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """3x3 box mean and variance with edge padding."""
    padded = np.pad(image.astype(np.float64), 1, mode="edge")
    h, w = image.shape
    acc = np.zeros((h, w))
    acc_sq = np.zeros((h, w))
    for di in range(3):
        for dj in range(3):
            win = padded[di : di + h, dj : dj + w]
            acc += win
            acc_sq += win * win
    mean = acc / 9.0
    var = np.maximum(acc_sq / 9.0 - mean * mean, 0.0)
    return mean, var


def pixel_features(image: np.ndarray) -> np.ndarray:
    """(F, N) feature matrix for one (H, W) image."""
    image = np.asarray(image, dtype=np.float64)
    h, w = image.shape
    mean, var = box_stats(image)
    rows = np.linspace(-1.0, 1.0, h)[:, None] * np.ones((1, w))
    cols = np.ones((h, 1)) * np.linspace(-1.0, 1.0, w)[None, :]
    feats = np.stack([image, mean, var, rows, cols])
    return feats.reshape(NUM_FEATURES, h * w)


@dataclass
class ToyModel:
    """Two-layer pixelwise classifier; weights are plain arrays.

    feat_shift / feat_scale standardize the raw features before the first
    layer (fixed at init from training statistics, never trained), which
    keeps the gradient descent step well conditioned across features of
    very different magnitudes.
    """

    w1: np.ndarray          # (hidden, F)
    b1: np.ndarray          # (hidden, 1)
    w2: np.ndarray          # (C, hidden)
    b2: np.ndarray          # (C, 1)
    feat_shift: np.ndarray  # (F, 1)
    feat_scale: np.ndarray  # (F, 1)

    @property
    def num_classes(self) -> int:
        return self.w2.shape[0]

    @property
    def hidden(self) -> int:
        return self.w1.shape[0]

    @classmethod
    def init(
        cls,
        num_classes: int,
        hidden: int,
        seed: int,
        feature_stats: tuple[np.ndarray, np.ndarray] | None = None,
    ) -> "ToyModel":
        rng = np.random.default_rng(seed)
        if feature_stats is None:
            shift = np.zeros((NUM_FEATURES, 1))
            scale = np.ones((NUM_FEATURES, 1))
        else:
            mu, sigma = feature_stats
            shift = np.asarray(mu, dtype=np.float64).reshape(NUM_FEATURES, 1)
            scale = np.maximum(
                np.asarray(sigma, dtype=np.float64).reshape(NUM_FEATURES, 1), 1e-6
            )
        return cls(
            w1=rng.normal(0.0, 1.0 / np.sqrt(NUM_FEATURES), (hidden, NUM_FEATURES)),
            b1=np.zeros((hidden, 1)),
            w2=rng.normal(0.0, 1.0 / np.sqrt(hidden), (num_classes, hidden)),
            b2=np.zeros((num_classes, 1)),
            feat_shift=shift,
            feat_scale=scale,
        )

    def copy(self) -> "ToyModel":
        return ToyModel(
            self.w1.copy(), self.b1.copy(), self.w2.copy(), self.b2.copy(),
            self.feat_shift.copy(), self.feat_scale.copy(),
        )

    def standardize(self, feats: np.ndarray) -> np.ndarray:
        return (feats - self.feat_shift) / self.feat_scale

    def forward(self, feats_std: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(logits (C, N), hidden activations (hidden, N)).

        Expects already-standardized features (see standardize).
        """
        hidden = np.tanh(self.w1 @ feats_std + self.b1)
        return self.w2 @ hidden + self.b2, hidden

    def backward(self, feats_std: np.ndarray, hidden: np.ndarray, grad_logits: np.ndarray) -> "ToyModel":
        """Gradients of a scalar loss w.r.t. the weights, as a ToyModel."""
        d_hidden = self.w2.T @ grad_logits
        d_pre = d_hidden * (1.0 - hidden * hidden)
        return ToyModel(
            w1=d_pre @ feats_std.T,
            b1=d_pre.sum(axis=1, keepdims=True),
            w2=grad_logits @ hidden.T,
            b2=grad_logits.sum(axis=1, keepdims=True),
            feat_shift=np.zeros_like(self.feat_shift),
            feat_scale=np.zeros_like(self.feat_scale),
        )

    def predict_probs(self, image: np.ndarray) -> np.ndarray:
        """(C, H, W) softmax probabilities for one image."""
        h, w = image.shape
        logits, _ = self.forward(self.standardize(pixel_features(image)))
        return softmax(logits, axis=0).reshape(self.num_classes, h, w)

    def predict_logits(self, image: np.ndarray) -> np.ndarray:
        h, w = image.shape
        logits, _ = self.forward(self.standardize(pixel_features(image)))
        return logits.reshape(self.num_classes, h, w)

    def add_scaled(self, grad: "ToyModel", scale: float) -> None:
        """In-place update: weights += scale * grad (the GD step)."""
        self.w1 += scale * grad.w1
        self.b1 += scale * grad.b1
        self.w2 += scale * grad.w2
        self.b2 += scale * grad.b2

    def is_finite(self) -> bool:
        return all(
            np.isfinite(p).all() for p in (self.w1, self.b1, self.w2, self.b2)
        )


def feature_stats(feature_mats: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature mean and std across a list of (F, N) matrices."""
    stacked = np.concatenate(feature_mats, axis=1)
    return stacked.mean(axis=1), stacked.std(axis=1)


def zero_like(model: ToyModel) -> ToyModel:
    return ToyModel(
        np.zeros_like(model.w1), np.zeros_like(model.b1),
        np.zeros_like(model.w2), np.zeros_like(model.b2),
        np.zeros_like(model.feat_shift), np.zeros_like(model.feat_scale),
    )


def accumulate(total: ToyModel, grad: ToyModel, scale: float = 1.0) -> None:
    total.w1 += scale * grad.w1
    total.b1 += scale * grad.b1
    total.w2 += scale * grad.w2
    total.b2 += scale * grad.b2


def hard_dice(pred_labels: np.ndarray, true_labels: np.ndarray, num_classes: int) -> float:
    """Mean Dice of the argmax segmentation over foreground classes in the
    ground truth; a class predicted but absent from the truth is ignored."""
    scores = []
    for c in range(1, num_classes):
        gt = true_labels == c
        if not gt.any():
            continue
        pred = pred_labels == c
        denom = int(pred.sum() + gt.sum())
        scores.append(2.0 * int((pred & gt).sum()) / denom)
    return float(np.mean(scores)) if scores else float("nan")


def boundary_mask(labels: np.ndarray) -> np.ndarray:
    """Pixels with at least one differing 4-neighbor."""
    mask = np.zeros(labels.shape, dtype=bool)
    mask[:-1, :] |= labels[:-1, :] != labels[1:, :]
    mask[1:, :] |= labels[1:, :] != labels[:-1, :]
    mask[:, :-1] |= labels[:, :-1] != labels[:, 1:]
    mask[:, 1:] |= labels[:, 1:] != labels[:, :-1]
    return mask


def boundary_max_prob(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean max-probability over boundary pixels of the label map."""
    mask = boundary_mask(labels)
    if not mask.any():
        return float("nan")
    return float(probs.max(axis=0)[mask].mean())
