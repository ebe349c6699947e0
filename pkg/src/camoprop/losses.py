"""Composite training objective: focal + dice + IoU-regression MSE.

The three parts are each means over pixels (or a scalar for the IoU term)
and are combined as a weighted sum, 20:1:1 by default. The focal term is
computed from logits through softplus/sigmoid identities so it stays
finite for arbitrarily confident predictions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .stubs import MaskPrediction
from .tensor import ShapeError, Tensor


@dataclass
class LossWeights:
    focal: float = 20.0
    dice: float = 1.0
    iou_mse: float = 1.0

    def __post_init__(self):
        vals = (self.focal, self.dice, self.iou_mse)
        if any(v < 0 for v in vals):
            raise ValueError(f"loss weights must be nonnegative, got {vals}")
        if all(v == 0 for v in vals):
            raise ValueError("at least one loss weight must be positive")


def _check_target(target: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    target = np.asarray(target, dtype=np.float64)
    if target.shape != shape:
        raise ShapeError(f"target shape {target.shape} != prediction {shape}")
    if not np.all((target == 0.0) | (target == 1.0)):
        raise ValueError("target mask must be binary {0, 1}")
    return target


def focal_loss(logits: Tensor, target: np.ndarray, alpha: float = 0.25,
               gamma: float = 2.0) -> Tensor:
    """Mean over pixels of -alpha_t (1 - p_t)^gamma log(p_t)."""
    if gamma < 0:
        raise ValueError(f"gamma must be >= 0, got {gamma}")
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    target = _check_target(target, logits.shape)
    sign = Tensor(2.0 * target - 1.0)          # +1 on foreground, -1 elsewhere
    alpha_t = Tensor(alpha * target + (1.0 - alpha) * (1.0 - target))
    s = T.mul(logits, sign)                    # logit of the true class
    # 1 - p_t == sigmoid(-s) and -log(p_t) == softplus(-s)
    neg_s = T.neg(s)
    per_pixel = T.mul(alpha_t, T.mul(T.pow_const(T.sigmoid(neg_s), gamma),
                                     T.softplus(neg_s)))
    return T.tmean(per_pixel)


def dice_loss(probs: Tensor, target: np.ndarray, smooth: float = 1.0) -> Tensor:
    """1 - (2 sum(p*t) + smooth) / (sum(p) + sum(t) + smooth)."""
    target = _check_target(target, probs.shape)
    if probs.data.min() < -1e-9 or probs.data.max() > 1 + 1e-9:
        raise ValueError("dice_loss expects probabilities in [0, 1]")
    inter = T.tsum(T.mul(probs, Tensor(target)))
    num = T.add_const(T.scale(inter, 2.0), smooth)
    den = T.add_const(T.tsum(probs), float(target.sum()) + smooth)
    return T.add_const(T.neg(T.div(num, den)), 1.0)


def actual_iou(logits: np.ndarray, target: np.ndarray,
               threshold: float = 0.5) -> float:
    """IoU of the thresholded prediction against the target (no gradient)."""
    probs = 1.0 / (1.0 + np.exp(-logits))
    pred_bin = probs >= threshold
    gt = target > 0.5
    union = np.count_nonzero(pred_bin | gt)
    if union == 0:
        return 1.0
    return np.count_nonzero(pred_bin & gt) / union


def iou_mse_loss(iou_pred: Tensor, logits: Tensor, target: np.ndarray,
                 threshold: float = 0.5) -> Tensor:
    """(iou_pred - actual IoU)^2; the actual IoU is treated as a constant
    because thresholding admits no useful gradient."""
    if iou_pred.data.min() < 0 or iou_pred.data.max() > 1:
        raise ValueError("iou_pred must lie in [0, 1]")
    target = _check_target(target, logits.shape)
    ref = actual_iou(logits.data, target, threshold)
    return T.pow_const(T.add_const(iou_pred, -ref), 2.0)


def total_loss(pred: MaskPrediction, target: np.ndarray,
               weights: LossWeights = LossWeights(),
               alpha: float = 0.25, gamma: float = 2.0, smooth: float = 1.0,
               threshold: float = 0.5, return_parts: bool = False):
    """Weighted sum of the three parts (focal, dice, iou_mse)."""
    focal = focal_loss(pred.logits, target, alpha, gamma)
    dice = dice_loss(T.sigmoid(pred.logits), target, smooth)
    iou = iou_mse_loss(pred.iou_pred, pred.logits, target, threshold)
    total = T.add(T.add(T.scale(focal, weights.focal),
                        T.scale(dice, weights.dice)),
                  T.scale(iou, weights.iou_mse))
    if return_parts:
        return total, {"focal": focal.item(), "dice": dice.item(),
                       "iou_mse": iou.item()}
    return total
