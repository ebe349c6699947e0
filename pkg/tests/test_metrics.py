"""Evaluation measures against literal-formula oracles."""

import numpy as np
import pytest

from camoprop import metrics
from camoprop.metrics import (MetricReport, aggregate_reports, dice_iou,
                              e_measure, evaluate_sequence, format_keyvalues,
                              format_table, mae, s_measure, weighted_f_measure)

import oracles
from conftest import make_rng


def random_pair(seed, shape=(8, 8), fg=0.35):
    rng = make_rng(seed)
    pred = rng.random(shape)
    gt = (rng.random(shape) < fg).astype(np.float64)
    return pred, gt


def blob_gt(shape=(8, 8)):
    gt = np.zeros(shape)
    gt[2:6, 3:7] = 1.0
    return gt


class TestMae:
    def test_equal_masks(self):
        _, gt = random_pair(0)
        assert mae(gt, gt) == 0.0

    def test_inverted_binary(self):
        gt = blob_gt()
        assert mae(1.0 - gt, gt) == 1.0

    def test_matches_oracle(self):
        pred, gt = random_pair(1)
        np.testing.assert_allclose(mae(pred, gt), oracles.oracle_mae(pred, gt),
                                   atol=1e-12)


class TestWeightedF:
    def test_perfect(self):
        gt = blob_gt()
        assert weighted_f_measure(gt.copy(), gt) == 1.0

    def test_all_zero_pred(self):
        # with the object clear of the border (no Gaussian zero-padding
        # leakage), a blank prediction scores exactly zero
        gt = np.zeros((16, 16))
        gt[6:10, 6:10] = 1.0
        assert weighted_f_measure(np.zeros_like(gt), gt) == 0.0

    def test_empty_gt_fallback(self):
        pred = make_rng(2).random((6, 6))
        assert weighted_f_measure(pred, np.zeros((6, 6))) == 0.0

    def test_small_case_matches_transcription(self):
        rng = make_rng(3)
        gt = np.zeros((4, 4))
        gt[1:3, 1:3] = 1.0
        pred = rng.random((4, 4))
        got = weighted_f_measure(pred, gt)
        want = oracles.oracle_weighted_f(pred, gt)
        np.testing.assert_allclose(got, want, atol=1e-9)

    def test_random_8x8_matches_transcription(self):
        for seed in range(5):
            pred, gt = random_pair(100 + seed)
            if gt.sum() == 0:
                continue
            np.testing.assert_allclose(weighted_f_measure(pred, gt),
                                       oracles.oracle_weighted_f(pred, gt),
                                       atol=1e-9)


class TestSMeasure:
    def test_perfect_binary(self):
        gt = blob_gt()
        np.testing.assert_allclose(s_measure(gt.copy(), gt), 1.0, atol=1e-9)

    def test_inverted_scores_low(self):
        gt = blob_gt()
        assert s_measure(1.0 - gt, gt) < 0.5

    def test_empty_gt_fallback(self):
        pred = make_rng(4).random((6, 6))
        np.testing.assert_allclose(s_measure(pred, np.zeros((6, 6))),
                                   1.0 - pred.mean(), atol=1e-12)

    def test_full_gt_fallback(self):
        pred = make_rng(5).random((6, 6))
        np.testing.assert_allclose(s_measure(pred, np.ones((6, 6))),
                                   pred.mean(), atol=1e-12)

    def test_matches_transcription(self):
        for seed in range(5):
            pred, gt = random_pair(200 + seed)
            np.testing.assert_allclose(s_measure(pred, gt),
                                       oracles.oracle_s_measure(pred, gt),
                                       atol=1e-9)


class TestEMeasure:
    def test_perfect(self):
        gt = blob_gt()
        np.testing.assert_allclose(e_measure(gt.copy(), gt), 1.0, atol=1e-9)

    def test_inverted_is_zero(self):
        # both classes present and prediction exactly inverted
        gt = blob_gt()
        assert e_measure(1.0 - gt, gt) <= 1e-6

    def test_matches_transcription(self):
        for seed in range(5):
            pred, gt = random_pair(300 + seed)
            np.testing.assert_allclose(e_measure(pred, gt),
                                       oracles.oracle_e_measure(pred, gt),
                                       atol=1e-9)

    def test_empty_gt_fallback(self):
        pred = np.zeros((5, 5))
        np.testing.assert_allclose(e_measure(pred, np.zeros((5, 5))), 1.0,
                                   atol=1e-12)


class TestDiceIou:
    def test_identical_nonempty(self):
        gt = blob_gt()
        assert dice_iou(gt.copy(), gt) == (1.0, 1.0)

    def test_disjoint_equal_area(self):
        a = np.zeros((4, 4))
        b = np.zeros((4, 4))
        a[0, :2] = 1.0
        b[3, :2] = 1.0
        assert dice_iou(a, b) == (0.0, 0.0)

    def test_both_empty(self):
        z = np.zeros((3, 3))
        assert dice_iou(z, z) == (1.0, 1.0)

    def test_matches_pixel_count_oracle(self):
        rng = make_rng(6)
        a = (rng.random((8, 8)) > 0.5).astype(np.float64)
        b = (rng.random((8, 8)) > 0.5).astype(np.float64)
        np.testing.assert_allclose(dice_iou(a, b), oracles.oracle_dice_iou(a, b),
                                   atol=1e-12)


class TestInvariants:
    def test_permutation_invariance(self):
        rng = make_rng(7)
        pred, gt = random_pair(8)
        perm = rng.permutation(64)
        pp = pred.reshape(-1)[perm].reshape(8, 8)
        gp = gt.reshape(-1)[perm].reshape(8, 8)
        # position-free measures are invariant under a shared relabeling
        np.testing.assert_allclose(mae(pp, gp), mae(pred, gt), atol=1e-12)
        np.testing.assert_allclose(e_measure(pp, gp), e_measure(pred, gt),
                                   atol=1e-12)
        d1 = dice_iou((pp >= 0.5).astype(float), gp)
        d2 = dice_iou((pred >= 0.5).astype(float), gt)
        np.testing.assert_allclose(d1, d2, atol=1e-12)

    def test_perfect_prediction_across_all_measures(self):
        gt = blob_gt()
        report = evaluate_sequence([gt, gt.copy()], [gt, gt.copy()],
                                   skip_first=True)
        assert report.frames_scored == 1
        np.testing.assert_allclose(
            report.values(), (1.0, 1.0, 1.0, 0.0, 1.0, 1.0), atol=1e-9)

    @pytest.mark.slow
    def test_exhaustive_3x3_sweep(self):
        """All 512 binary 3x3 ground truths x 10 random soft predictions
        match the scalar oracles for every measure."""
        rng = make_rng(9)
        preds = [rng.random((3, 3)) for _ in range(10)]
        for code in range(512):
            gt = np.array([(code >> k) & 1 for k in range(9)],
                          dtype=np.float64).reshape(3, 3)
            for pred in preds:
                np.testing.assert_allclose(
                    mae(pred, gt), oracles.oracle_mae(pred, gt), atol=1e-9)
                np.testing.assert_allclose(
                    weighted_f_measure(pred, gt),
                    oracles.oracle_weighted_f(pred, gt), atol=1e-9)
                np.testing.assert_allclose(
                    s_measure(pred, gt), oracles.oracle_s_measure(pred, gt),
                    atol=1e-9)
                np.testing.assert_allclose(
                    e_measure(pred, gt), oracles.oracle_e_measure(pred, gt),
                    atol=1e-9)
                pb = (pred >= 0.5).astype(np.float64)
                np.testing.assert_allclose(
                    dice_iou(pb, gt), oracles.oracle_dice_iou(pb, gt),
                    atol=1e-9)


class TestSequences:
    def test_skip_first_counts(self):
        gt = blob_gt()
        report = evaluate_sequence([gt] * 3, [gt] * 3, skip_first=True)
        assert report.frames_scored == 2

    def test_length_mismatch(self):
        gt = blob_gt()
        with pytest.raises(ValueError):
            evaluate_sequence([gt], [gt, gt])

    def test_too_short_with_skip(self):
        gt = blob_gt()
        with pytest.raises(ValueError):
            evaluate_sequence([gt], [gt], skip_first=True)

    def test_mixed_sequence_is_mean_of_frames(self):
        rng = make_rng(10)
        gts = [blob_gt() for _ in range(3)]
        preds = [gts[0]] + [rng.random((8, 8)) for _ in range(2)]
        rep = evaluate_sequence(preds, gts, skip_first=True)
        per_frame = [metrics.evaluate_frame(p, g)
                     for p, g in zip(preds[1:], gts[1:])]
        np.testing.assert_allclose(rep.values(),
                                   np.mean(per_frame, axis=0), atol=1e-12)

    def test_aggregate_is_unweighted_sequence_mean(self):
        r1 = MetricReport(1.0, 1.0, 1.0, 0.0, 1.0, 1.0, frames_scored=2)
        r2 = MetricReport(0.0, 0.0, 0.0, 1.0, 0.0, 0.0, frames_scored=7)
        agg = aggregate_reports([r1, r2])
        np.testing.assert_allclose(agg.values(), (0.5,) * 3 + (0.5,) + (0.5,) * 2)
        assert agg.frames_scored == 9

    def test_table_and_keyvalue_formats(self):
        rep = MetricReport(0.9, 0.8, 0.7, 0.01, 0.85, 0.75, frames_scored=4)
        table = format_table([("seq01", rep)])
        header, row = table.strip().split("\n")
        assert header.split("\t") == ["sequence", "s_alpha", "f_beta_w",
                                      "e_phi", "mae", "m_dice", "m_iou"]
        assert row.startswith("seq01\t0.900000\t0.800000\t0.700000\t0.010000")
        kv = format_keyvalues(rep)
        assert "s_alpha=0.900000" in kv and "frames_scored=4" in kv
