import math

import numpy as np
import pytest

from changeseg import losses
from changeseg.losses import (
    bce, bce_dice, bce_dice_grad, bce_grad, dice_grad, dice_loss, iou_grad, iou_loss,
)


def rand_case(rng, n=100):
    x = rng.uniform(0.02, 0.98, size=n)
    y = (rng.random(n) < 0.5).astype(np.float64)
    return x, y


def fd_grad(fn, x, eps=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xp[i] += eps
        xm = x.copy()
        xm[i] -= eps
        g[i] = (fn(xp) - fn(xm)) / (2 * eps)
    return g


# -- bce ----------------------------------------------------------------

def test_bce_perfect_prediction():
    y = np.array([0.0, 1.0, 1.0, 0.0])
    assert bce(y, y).scalar <= 1.1e-7  # clamp floor


def test_bce_uniform_half():
    for y in (np.zeros(50), np.ones(50), (np.arange(50) % 2).astype(float)):
        assert bce(np.full(50, 0.5), y).scalar == pytest.approx(math.log(2), abs=1e-9)


def test_bce_matches_loop_oracle(rng):
    x, y = rand_case(rng)
    total = 0.0
    for xi, yi in zip(x, y):
        total += yi * math.log(xi) + (1 - yi) * math.log(1 - xi)
    assert bce(x, y).scalar == pytest.approx(-total / len(x), abs=1e-6)


def test_bce_errors():
    with pytest.raises(ValueError, match="length"):
        bce(np.zeros(3), np.zeros(4))
    with pytest.raises(ValueError, match="empty"):
        bce(np.zeros(0), np.zeros(0))


# -- dice ---------------------------------------------------------------

def test_dice_perfect_overlap():
    ones = np.ones(64)
    assert dice_loss(ones, ones).scalar == pytest.approx(0.0, abs=1e-12)


def test_dice_half_analytic():
    n = 100
    x = np.ones(n)
    y = np.concatenate([np.ones(n // 2), np.zeros(n // 2)])
    assert dice_loss(x, y, smooth=0.0).scalar == pytest.approx(1.0 / 3.0, abs=1e-12)


def test_dice_empty_empty_zero_via_smooth():
    z = np.zeros(10)
    assert dice_loss(z, z).scalar == 0.0
    with pytest.raises(ValueError):
        dice_loss(z, z, smooth=0.0)


# -- composite ------------------------------------------------------------

def test_bce_dice_is_sum(rng):
    x, y = rand_case(rng)
    combo = bce_dice(x, y)
    assert combo.scalar == pytest.approx(bce(x, y).scalar + dice_loss(x, y).scalar, abs=1e-7)
    assert combo.term_breakdown["bce"] + combo.term_breakdown["dice"] == \
        pytest.approx(combo.scalar, abs=1e-6)


def test_bce_dice_perfect_near_zero():
    y = np.array([1.0, 0.0, 1.0])
    assert bce_dice(y, y).scalar < 1e-6


def test_bce_dice_half_ones_analytic():
    n = 100
    x = np.full(n, 0.5)
    y = np.ones(n)
    val = bce(x, y).scalar + dice_loss(x, y, smooth=0.0).scalar
    assert val == pytest.approx(math.log(2) + 1.0 / 3.0, abs=1e-9)


# -- iou ------------------------------------------------------------------

def test_iou_perfect_overlap():
    ones = np.ones(32)
    assert iou_loss(ones, ones).scalar == pytest.approx(0.0, abs=1e-12)


def test_iou_half_analytic():
    n = 80
    x = np.ones(n)
    y = np.concatenate([np.ones(n // 2), np.zeros(n // 2)])
    assert iou_loss(x, y, smooth=0.0).scalar == pytest.approx(0.5, abs=1e-12)


# -- gradients --------------------------------------------------------------

def test_gradients_match_finite_differences(rng):
    x, y = rand_case(rng, n=40)
    cases = [
        (lambda v: bce(v, y).scalar, bce_grad(x, y)),
        (lambda v: dice_loss(v, y).scalar, dice_grad(x, y)),
        (lambda v: bce_dice(v, y).scalar, bce_dice_grad(x, y)),
        (lambda v: iou_loss(v, y).scalar, iou_grad(x, y)),
    ]
    for fn, analytic in cases:
        fd = fd_grad(fn, x)
        np.testing.assert_allclose(analytic, fd, rtol=1e-4, atol=1e-9)


def test_monotonicity_raising_true_positive(rng):
    # raising x_i where y_i = 1 never increases any loss
    x, y = rand_case(rng, n=60)
    idx = np.flatnonzero(y == 1.0)[:10]
    for fn in (lambda a, b: bce(a, b).scalar,
               lambda a, b: dice_loss(a, b).scalar,
               lambda a, b: iou_loss(a, b).scalar):
        base = fn(x, y)
        for i in idx:
            x2 = x.copy()
            x2[i] = min(x2[i] + 0.01, 1.0 - 1e-7)
            assert fn(x2, y) <= base + 1e-12


def test_losses_nonnegative_bounded(rng):
    for _ in range(20):
        x, y = rand_case(rng)
        assert bce(x, y).scalar >= 0
        assert 0 <= dice_loss(x, y).scalar <= 1
        assert 0 <= iou_loss(x, y).scalar <= 1


def test_binary_iou_equals_one_minus_metric(rng):
    # cross-module consistency with the metrics implementation
    from changeseg.metrics import confusion, compute_metrics
    from changeseg.raster import LabelMask

    for _ in range(25):
        p = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        g = (rng.random((8, 8)) < 0.5).astype(np.uint8)
        if p.sum() + g.sum() == 0:
            continue
        loss = iou_loss(p.astype(float).ravel(), g.astype(float).ravel(), smooth=0.0).scalar
        report = compute_metrics(confusion(LabelMask(p), LabelMask(g)))
        assert loss == pytest.approx(1.0 - report.iou, abs=1e-9)
