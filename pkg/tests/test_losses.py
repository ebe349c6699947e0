"""Composite loss: closed forms, brute-force oracles, gradients."""

import numpy as np
import pytest

from camoprop import tensor as T
from camoprop.losses import (LossWeights, actual_iou, dice_loss, focal_loss,
                             iou_mse_loss, total_loss)
from camoprop.stubs import MaskPrediction
from camoprop.tensor import ShapeError, Tensor, gradcheck

import oracles
from conftest import make_rng


def random_case(seed, shape=(8, 8), fg=0.3):
    rng = make_rng(seed)
    logits = rng.normal(scale=3.0, size=shape)
    target = (rng.random(shape) < fg).astype(np.float64)
    return logits, target


class TestFocal:
    def test_perfect_prediction_vanishes(self):
        target = (make_rng(0).random((6, 6)) > 0.5).astype(np.float64)
        logits = Tensor(20.0 * (2.0 * target - 1.0))
        assert focal_loss(logits, target).item() <= 1e-6

    def test_gamma_zero_alpha_half_is_half_bce(self):
        logits, target = random_case(1)
        got = focal_loss(Tensor(logits), target, alpha=0.5, gamma=0.0).item()
        p = 1.0 / (1.0 + np.exp(-logits))
        bce = -(target * np.log(p) + (1 - target) * np.log(1 - p)).mean()
        np.testing.assert_allclose(got, 0.5 * bce, rtol=1e-12)

    def test_matches_per_pixel_oracle(self):
        logits, target = random_case(2)
        got = focal_loss(Tensor(logits), target).item()
        want = oracles.oracle_focal(logits, target)
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_extreme_logits_stay_finite(self):
        target = np.ones((4, 4))
        loss = focal_loss(Tensor(np.full((4, 4), -200.0)), target)
        assert np.isfinite(loss.item())

    def test_binary_target_enforced(self):
        with pytest.raises(ValueError):
            focal_loss(Tensor(np.zeros((2, 2))), np.full((2, 2), 0.5))

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            focal_loss(Tensor(np.zeros((2, 2))), np.zeros((3, 3)))

    def test_monotone_toward_target(self):
        # stepping logits toward +/-20 * (2t - 1) never increases the loss
        logits, target = random_case(3)
        goal = 20.0 * (2.0 * target - 1.0)
        prev = np.inf
        for lam in np.linspace(0.0, 1.0, 11):
            cur = focal_loss(Tensor((1 - lam) * logits + lam * goal), target).item()
            assert cur <= prev + 1e-12
            prev = cur


class TestDice:
    def test_perfect_overlap_near_zero(self):
        target = (make_rng(4).random((8, 8)) > 0.6).astype(np.float64)
        loss = dice_loss(Tensor(target.copy()), target).item()
        assert loss <= 1e-6 or target.sum() == 0

    def test_disjoint_closed_form(self):
        h = w = 8
        probs = Tensor(np.ones((h, w)))
        target = np.zeros((h, w))
        want = 1.0 - 1.0 / (h * w + 1.0)
        np.testing.assert_allclose(dice_loss(probs, target).item(), want,
                                   rtol=1e-12)

    def test_matches_oracle(self):
        rng = make_rng(5)
        probs = rng.random((8, 8))
        target = (rng.random((8, 8)) > 0.5).astype(np.float64)
        got = dice_loss(Tensor(probs), target).item()
        np.testing.assert_allclose(got, oracles.oracle_dice_loss(probs, target),
                                   atol=1e-12)

    def test_range(self):
        rng = make_rng(6)
        for _ in range(20):
            probs = rng.random((5, 5))
            target = (rng.random((5, 5)) > 0.5).astype(np.float64)
            v = dice_loss(Tensor(probs), target).item()
            assert 0.0 <= v <= 1.0

    def test_probability_range_enforced(self):
        with pytest.raises(ValueError):
            dice_loss(Tensor(np.full((2, 2), 1.5)), np.ones((2, 2)))


class TestIouMse:
    def test_exact_prediction_gives_zero(self):
        logits, target = random_case(7)
        ref = actual_iou(logits, target)
        loss = iou_mse_loss(Tensor(ref), Tensor(logits), target)
        assert loss.item() == 0.0

    def test_opposite_extremes_give_one(self):
        target = np.zeros((4, 4))
        logits = Tensor(np.full((4, 4), 10.0))  # predicts everything
        loss = iou_mse_loss(Tensor(1.0), logits, target)
        np.testing.assert_allclose(loss.item(), 1.0, rtol=1e-12)

    def test_matches_pixel_count_oracle(self):
        logits, target = random_case(8)
        got = iou_mse_loss(Tensor(0.37), Tensor(logits), target).item()
        want = oracles.oracle_iou_mse(0.37, logits, target)
        np.testing.assert_allclose(got, want, atol=1e-12)


class TestTotal:
    def test_perfect_prediction_tiny(self):
        target = (make_rng(9).random((8, 8)) > 0.6).astype(np.float64)
        pred = MaskPrediction(logits=Tensor(20.0 * (2 * target - 1)),
                              iou_pred=Tensor(1.0 - 1e-9))
        assert total_loss(pred, target).item() <= 1e-5

    def test_weights_project_to_focal(self):
        logits, target = random_case(10)
        pred = MaskPrediction(logits=Tensor(logits), iou_pred=Tensor(0.5))
        got = total_loss(pred, target, LossWeights(1.0, 0.0, 0.0)).item()
        np.testing.assert_allclose(got, focal_loss(Tensor(logits), target).item(),
                                   rtol=1e-12)

    def test_equals_recomposed_parts(self):
        logits, target = random_case(11)
        pred = MaskPrediction(logits=Tensor(logits), iou_pred=Tensor(0.7))
        total, parts = total_loss(pred, target, return_parts=True)
        want = 20.0 * parts["focal"] + parts["dice"] + parts["iou_mse"]
        np.testing.assert_allclose(total.item(), want, rtol=1e-12)
        assert total.item() >= 0.0

    def test_default_ratio_is_20_1_1(self):
        w = LossWeights()
        assert (w.focal, w.dice, w.iou_mse) == (20.0, 1.0, 1.0)

    def test_invalid_weights_rejected(self):
        with pytest.raises(ValueError):
            LossWeights(-1.0, 1.0, 1.0)
        with pytest.raises(ValueError):
            LossWeights(0.0, 0.0, 0.0)

    def test_gradcheck_wrt_logits_and_iou(self):
        rng = make_rng(12)
        logits_data = rng.normal(scale=2.0, size=(6, 6))
        logits_data = np.where(np.abs(logits_data) < 0.05, 0.3, logits_data)
        target = (rng.random((6, 6)) > 0.5).astype(np.float64)
        logits = Tensor(logits_data)
        raw_iou = Tensor(0.21)

        def f(lg, ri):
            return total_loss(MaskPrediction(lg, T.sigmoid(ri)), target)

        report = gradcheck(f, [logits, raw_iou], eps=1e-5, tol=1e-4)
        assert report.passed, report.max_rel_err
