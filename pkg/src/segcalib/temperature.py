"""Post-hoc temperature scaling of segmentation logits.

A single scalar T > 0 rescales the logits before the softmax,
p = softmax(z / T), which leaves every argmax decision unchanged while
reshaping the confidence distribution.  T is fit by minimizing the
voxel-mean cross-entropy of a held-out stream of (logits, labels) images
with a scalar Adam optimizer on phi = log T (so T stays positive without
constraints).  The gradient has a closed form:

    dCE/dphi = mean over voxels of (z_y - sum_c p_c z_c) / T

One image per optimizer step, images visited in stream order; after every
epoch the full-stream CE is evaluated and the best temperature seen is the
one returned.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

from .reliability import ShapeError


def softmax(logits: np.ndarray, axis: int = 0) -> np.ndarray:
    """Numerically stable softmax."""
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def apply_temperature(logits: np.ndarray, temperature: float) -> np.ndarray:
    """Probabilities after scaling: softmax(logits / temperature)."""
    if temperature <= 0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    return softmax(np.asarray(logits, dtype=np.float64) / temperature, axis=0)


def _flat_logits_labels(logits: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim < 2:
        raise ShapeError(f"logits must be (C, *spatial), got {z.shape}")
    c = z.shape[0]
    spatial = z.shape[1:]
    y = np.asarray(labels)
    if y.shape != spatial:
        raise ShapeError(f"labels shape {y.shape} does not match spatial {spatial}")
    if not np.issubdtype(y.dtype, np.integer):
        raise ShapeError("labels must be an integer index map")
    y = y.reshape(-1)
    if y.size and (y.min() < 0 or y.max() >= c):
        raise ShapeError(f"label index {int(y.max())} out of range for {c} classes")
    return z.reshape(c, -1), y


def nll_sum(logits: np.ndarray, labels: np.ndarray, temperature: float) -> tuple[float, int]:
    """(sum of per-voxel negative log-likelihoods, voxel count) at T."""
    z, y = _flat_logits_labels(logits, labels)
    u = z / temperature
    u = u - u.max(axis=0, keepdims=True)
    log_p = u - np.log(np.exp(u).sum(axis=0, keepdims=True))
    n = y.size
    return float(-log_p[y, np.arange(n)].sum()), n


def ce_grad_phi(logits: np.ndarray, labels: np.ndarray, temperature: float) -> tuple[float, float]:
    """Per-image mean CE and its gradient w.r.t. phi = log(temperature)."""
    z, y = _flat_logits_labels(logits, labels)
    n = y.size
    u = z / temperature
    u = u - u.max(axis=0, keepdims=True)
    e = np.exp(u)
    p = e / e.sum(axis=0, keepdims=True)
    log_p = u - np.log(e.sum(axis=0, keepdims=True))
    ce = float(-log_p[y, np.arange(n)].mean())
    z_true = z[y, np.arange(n)]
    expected_z = (p * z).sum(axis=0)
    grad = float((z_true - expected_z).mean() / temperature)
    return ce, grad


CaseStream = Sequence[tuple[np.ndarray, np.ndarray]] | Callable[[], Iterable[tuple[np.ndarray, np.ndarray]]]


@dataclass
class TemperatureResult:
    temperature: float
    ce_initial: float
    ce_final: float
    steps: int
    epochs: int
    history: list[tuple[int, float, float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "temperature": self.temperature,
            "ce_initial": self.ce_initial,
            "ce_final": self.ce_final,
            "steps": self.steps,
            "epochs": self.epochs,
        }


def _iterate(cases: CaseStream) -> Iterable[tuple[np.ndarray, np.ndarray]]:
    if callable(cases):
        return cases()
    return cases


def stream_ce(cases: CaseStream, temperature: float) -> float:
    """Voxel-weighted mean cross-entropy over the whole stream."""
    total = 0.0
    count = 0
    for logits, labels in _iterate(cases):
        s, n = nll_sum(logits, labels, temperature)
        total += s
        count += n
    if count == 0:
        raise ValueError("temperature stream contained no voxels")
    return total / count


def fit_temperature(
    cases: CaseStream,
    *,
    epochs: int = 1,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    init_temperature: float = 1.0,
) -> TemperatureResult:
    """Fit the scalar temperature by Adam on phi = log T over the stream.

    Each image in the stream is one optimizer step; the stream is replayed
    in the same order every epoch.  The full-stream CE is measured at the
    initial temperature and after each epoch, and the temperature with the
    lowest stream CE wins.
    """
    if epochs < 1:
        raise ValueError(f"epochs must be >= 1, got {epochs}")
    if init_temperature <= 0:
        raise ValueError(f"init temperature must be positive, got {init_temperature}")
    phi = float(np.log(init_temperature))
    m = 0.0
    v = 0.0
    t = 0

    ce_initial = stream_ce(cases, init_temperature)
    best_ce = ce_initial
    best_phi = phi
    history: list[tuple[int, float, float]] = [(0, init_temperature, ce_initial)]

    for epoch in range(1, epochs + 1):
        saw_case = False
        for logits, labels in _iterate(cases):
            saw_case = True
            _, g = ce_grad_phi(logits, labels, float(np.exp(phi)))
            t += 1
            m = beta1 * m + (1.0 - beta1) * g
            v = beta2 * v + (1.0 - beta2) * g * g
            m_hat = m / (1.0 - beta1**t)
            v_hat = v / (1.0 - beta2**t)
            phi -= lr * m_hat / (np.sqrt(v_hat) + eps)
        if not saw_case:
            raise ValueError("temperature stream contained no cases")
        temp = float(np.exp(phi))
        ce = stream_ce(cases, temp)
        history.append((epoch, temp, ce))
        if ce < best_ce:
            best_ce = ce
            best_phi = phi

    return TemperatureResult(
        temperature=float(np.exp(best_phi)),
        ce_initial=ce_initial,
        ce_final=best_ce,
        steps=t,
        epochs=epochs,
        history=history,
    )
