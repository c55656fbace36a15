"""Training objectives: BCE, Dice, BCE+Dice, IoU — values and exact gradients.

Inputs are post-sigmoid probabilities (soft Dice/IoU keeps everything
differentiable). Reductions run in float64 regardless of input dtype so
finite-difference checks stay tight. Dice/IoU carry a +1 smoothing term
by default, which makes the empty-vs-empty case 0; smooth=0 reproduces
the exact textbook formulas.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

CLAMP_EPS = 1e-7


@dataclass
class LossValue:
    scalar: float
    term_breakdown: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        if not np.isfinite(self.scalar):
            raise ValueError(f"non-finite loss value {self.scalar}")

    def __float__(self) -> float:
        return self.scalar


def _prep(x, y) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size == 0:
        raise ValueError("empty input")
    if x.shape != y.shape:
        raise ValueError(f"length mismatch: {x.size} predictions vs {y.size} targets")
    return x, y


def bce(x, y) -> LossValue:
    """-(1/N) sum[y ln x + (1-y) ln(1-x)], x clamped to [eps, 1-eps]."""
    x, y = _prep(x, y)
    xc = np.clip(x, CLAMP_EPS, 1.0 - CLAMP_EPS)
    val = -np.mean(y * np.log(xc) + (1.0 - y) * np.log1p(-xc))
    return LossValue(float(val))


def bce_grad(x, y) -> np.ndarray:
    x_flat, y = _prep(x, y)
    xc = np.clip(x_flat, CLAMP_EPS, 1.0 - CLAMP_EPS)
    g = -(y / xc - (1.0 - y) / (1.0 - xc)) / x_flat.size
    g[(x_flat < CLAMP_EPS) | (x_flat > 1.0 - CLAMP_EPS)] = 0.0  # clamp is flat
    return g.reshape(np.shape(x))


def dice_loss(x, y, smooth: float = 1.0) -> LossValue:
    """1 - (2*sum(xy) + smooth) / (sum(x) + sum(y) + smooth)."""
    x, y = _prep(x, y)
    num = 2.0 * np.dot(x, y) + smooth
    den = x.sum() + y.sum() + smooth
    if den == 0.0:
        raise ValueError("dice_loss undefined: both masks empty and smooth=0")
    return LossValue(float(1.0 - num / den))


def dice_grad(x, y, smooth: float = 1.0) -> np.ndarray:
    x_flat, y = _prep(x, y)
    a = 2.0 * np.dot(x_flat, y) + smooth
    b = x_flat.sum() + y.sum() + smooth
    g = -(2.0 * y * b - a) / (b * b)
    return g.reshape(np.shape(x))


def bce_dice(x, y, smooth: float = 1.0) -> LossValue:
    b = bce(x, y)
    d = dice_loss(x, y, smooth=smooth)
    return LossValue(b.scalar + d.scalar,
                     term_breakdown={"bce": b.scalar, "dice": d.scalar})


def bce_dice_grad(x, y, smooth: float = 1.0) -> np.ndarray:
    return bce_grad(x, y) + dice_grad(x, y, smooth=smooth)


def iou_loss(x, y, smooth: float = 1.0) -> LossValue:
    """1 - (sum(xy) + smooth) / (sum(x + y - xy) + smooth)."""
    x, y = _prep(x, y)
    inter = np.dot(x, y)
    union = (x + y - x * y).sum()
    if union + smooth == 0.0:
        raise ValueError("iou_loss undefined: both masks empty and smooth=0")
    return LossValue(float(1.0 - (inter + smooth) / (union + smooth)))


def iou_grad(x, y, smooth: float = 1.0) -> np.ndarray:
    x_flat, y = _prep(x, y)
    a = np.dot(x_flat, y) + smooth
    b = (x_flat + y - x_flat * y).sum() + smooth
    g = -(y * b - a * (1.0 - y)) / (b * b)
    return g.reshape(np.shape(x))
