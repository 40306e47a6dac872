"""Reconstruction loss: equal parts binary cross-entropy and soft Dice."""
from __future__ import annotations

import numpy as np

from ..errors import NonFinite, ShapeMismatch

DICE_SMOOTH = 1.0
PROB_CLAMP = 1e-7


def _check(recon, target):
    recon = np.asarray(recon, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if recon.shape != target.shape:
        raise ShapeMismatch(f"recon {recon.shape} vs target {target.shape}")
    if not (np.isfinite(recon).all() and np.isfinite(target).all()):
        raise NonFinite("loss inputs contain NaN or Inf")
    return recon, target


def bce(recon, target) -> float:
    recon, target = _check(recon, target)
    p = np.clip(recon, PROB_CLAMP, 1 - PROB_CLAMP)
    return float(-np.mean(target * np.log(p) + (1 - target) * np.log1p(-p)))


def dice_loss(recon, target, eps: float = DICE_SMOOTH) -> float:
    recon, target = _check(recon, target)
    inter = np.sum(recon * target)
    return float(1.0 - (2 * inter + eps) / (recon.sum() + target.sum() + eps))


def loss(recon, target, eps: float = DICE_SMOOTH) -> float:
    """``0.5 * BCE + 0.5 * (1 - (2 sum(p t) + eps) / (sum p + sum t + eps))``.

    BCE is averaged over every element; the Dice sums run over the whole array.
    """
    return 0.5 * bce(recon, target) + 0.5 * dice_loss(recon, target, eps)


def loss_and_logit_grad(logits: np.ndarray, target: np.ndarray, eps: float = DICE_SMOOTH):
    """Loss of ``sigmoid(logits)`` and its gradient with respect to the logits.

    BCE is evaluated from the logits (``softplus(z) - t z``), which equals the
    probability form without needing a clamp, so saturated wrong outputs still
    receive gradient.
    """
    z = logits
    if z.shape != target.shape:
        raise ShapeMismatch(f"logits {z.shape} vs target {target.shape}")
    if not np.isfinite(z).all():
        raise NonFinite("non-finite logits")
    t = target.astype(z.dtype, copy=False)
    n = z.size
    p = sigmoid(z)
    # work in float64 for the scalar sums; arrays stay in the model dtype
    softplus = np.logaddexp(0, z)
    bce_val = float(np.sum(softplus - t * z, dtype=np.float64)) / n
    inter = float(np.sum(p * t, dtype=np.float64))
    s = float(np.sum(p, dtype=np.float64)) + float(np.sum(t, dtype=np.float64))
    denom = s + eps
    dice_val = 1.0 - (2 * inter + eps) / denom
    total = 0.5 * bce_val + 0.5 * dice_val
    if not np.isfinite(total):
        raise NonFinite("loss overflowed")

    dp_dice = -(2 * t * denom - (2 * inter + eps)) / denom ** 2
    dz = 0.5 * (p - t) / n + 0.5 * dp_dice.astype(z.dtype) * p * (1 - p)
    return total, dz.astype(z.dtype, copy=False)


def sigmoid(z: np.ndarray) -> np.ndarray:
    # tanh form avoids overflow in exp for large |z|
    return 0.5 * (1.0 + np.tanh(0.5 * z))
