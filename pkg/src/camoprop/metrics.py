"""Segmentation quality measures and per-sequence reporting.

Six measures: structure measure, weighted F-measure, enhanced-alignment
measure, mean absolute error, Dice and IoU. Predictions are soft maps in
[0, 1]; ground truth is binary. Conventions follow the measures' standard
reference implementations, with two local choices documented inline: the
enhanced-alignment score is the plain mean over pixels (keeping it inside
[0, 1] even on tiny grids), and nearest-foreground ties in the weighted
F-measure break toward the smallest row-major index so that independent
implementations agree exactly.

Everything here is plain numpy on detached arrays; nothing is
differentiated through.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

_EPS = np.finfo(np.float64).eps


def _check_pair(pred: np.ndarray, gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"pred shape {pred.shape} != gt shape {gt.shape}")
    if pred.min() < -1e-12 or pred.max() > 1 + 1e-12:
        raise ValueError("pred must lie in [0, 1]")
    if not np.all((gt == 0.0) | (gt == 1.0)):
        raise ValueError("gt must be binary {0, 1}")
    return np.clip(pred, 0.0, 1.0), gt


def mae(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean absolute per-pixel error."""
    pred, gt = _check_pair(pred, gt)
    return float(np.mean(np.abs(pred - gt)))


# --------------------------------------------------------------------------
# Weighted F-measure

_GAUSS_SIZE = 7
_GAUSS_SIGMA = 5.0


def _gaussian_kernel(size: int = _GAUSS_SIZE, sigma: float = _GAUSS_SIGMA) -> np.ndarray:
    half = (size - 1) / 2.0
    ax = np.arange(size) - half
    xx, yy = np.meshgrid(ax, ax, indexing="ij")
    k = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    return k / k.sum()


_GAUSS = _gaussian_kernel()


def _nearest_foreground(gt: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel Euclidean distance to the nearest foreground pixel and the
    flat index of that pixel (smallest row-major index on ties).

    All-pairs computation: adequate at evaluation scale, quadratic in
    pixel count, so not meant for megapixel masks.
    """
    h, w = gt.shape
    fg = np.argwhere(gt > 0.5)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d2 = ((rows.reshape(-1, 1) - fg[:, 0]) ** 2
          + (cols.reshape(-1, 1) - fg[:, 1]) ** 2)
    best = np.argmin(d2, axis=1)  # argmin takes the first minimum: the
    # foreground list is in row-major order, so ties resolve as documented
    dist = np.sqrt(d2[np.arange(d2.shape[0]), best]).reshape(h, w)
    flat_idx = (fg[best, 0] * w + fg[best, 1]).reshape(h, w)
    return dist, flat_idx


def weighted_f_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """Dependency-weighted F-measure with beta^2 = 1.

    Errors inside the foreground may be forgiven where the surrounding
    (Gaussian 7x7, sigma 5) error is lower; background errors are weighted
    up with distance from the foreground. Empty ground truth scores 0.
    """
    pred, gt = _check_pair(pred, gt)
    fg = gt > 0.5
    if not fg.any():
        return 0.0

    err = np.abs(pred - gt)
    dist, nearest = _nearest_foreground(gt)
    err_t = err.copy()
    err_t[~fg] = err.reshape(-1)[nearest[~fg]]
    err_avg = ndimage.correlate(err_t, _GAUSS, mode="constant", cval=0.0)
    min_err = err.copy()
    use_avg = fg & (err_avg < err)
    min_err[use_avg] = err_avg[use_avg]

    weight = np.ones_like(gt)
    weight[~fg] = 2.0 - np.exp(np.log(0.5) / 5.0 * dist[~fg])
    err_w = min_err * weight

    tp_w = gt.sum() - err_w[fg].sum()
    fp_w = err_w[~fg].sum()
    recall = 1.0 - err_w[fg].mean()
    precision = tp_w / (tp_w + fp_w) if tp_w + fp_w > 0 else 0.0
    if recall + precision == 0.0:
        return 0.0
    return float(2.0 * recall * precision / (recall + precision))


# --------------------------------------------------------------------------
# Structure measure


def _object_score(values: np.ndarray) -> float:
    x = values.mean()
    sigma = values.std(ddof=1) if values.size > 1 else 0.0
    return 2.0 * x / (x * x + 1.0 + sigma + _EPS)


def _region_ssim(p: np.ndarray, g: np.ndarray) -> float:
    n = p.size
    if n == 0:
        return 0.0
    x, y = p.mean(), g.mean()
    if n > 1:
        sx = ((p - x) ** 2).sum() / (n - 1)
        sy = ((g - y) ** 2).sum() / (n - 1)
        sxy = ((p - x) * (g - y)).sum() / (n - 1)
    else:
        sx = sy = sxy = 0.0
    a = 4.0 * x * y * sxy
    b = (x * x + y * y) * (sx + sy)
    if a != 0.0:
        return float(a / (b + _EPS))
    return 1.0 if b == 0.0 else 0.0


def _centroid(gt: np.ndarray) -> tuple[int, int]:
    """1-indexed centroid (row, col) of the foreground, rounded half-up;
    image center when the foreground is empty."""
    h, w = gt.shape
    fg = np.argwhere(gt > 0.5)
    if fg.size == 0:
        return int(np.floor(h / 2.0 + 0.5)), int(np.floor(w / 2.0 + 0.5))
    r = float(np.floor(fg[:, 0].mean() + 1.0 + 0.5))
    c = float(np.floor(fg[:, 1].mean() + 1.0 + 0.5))
    return int(r), int(c)


def s_measure(pred: np.ndarray, gt: np.ndarray, alpha: float = 0.5) -> float:
    """alpha * object similarity + (1 - alpha) * quadrant-region similarity.

    All-background ground truth falls back to 1 - mean(pred); all
    foreground to mean(pred). The result is clamped into [0, 1].
    """
    pred, gt = _check_pair(pred, gt)
    y = gt.mean()
    if y == 0.0:
        return float(1.0 - pred.mean())
    if y == 1.0:
        return float(pred.mean())

    fg = gt > 0.5
    s_obj = y * _object_score(pred[fg]) + (1.0 - y) * _object_score(1.0 - pred[~fg])

    cy, cx = _centroid(gt)
    h, w = gt.shape
    total = h * w
    score = 0.0
    for rs, cs in ((slice(0, cy), slice(0, cx)), (slice(0, cy), slice(cx, w)),
                   (slice(cy, h), slice(0, cx)), (slice(cy, h), slice(cx, w))):
        p_q, g_q = pred[rs, cs], gt[rs, cs]
        score += (p_q.size / total) * _region_ssim(p_q, g_q)

    s = alpha * s_obj + (1.0 - alpha) * score
    return float(min(1.0, max(0.0, s)))


# --------------------------------------------------------------------------
# Enhanced-alignment measure


def e_measure(pred: np.ndarray, gt: np.ndarray) -> float:
    """Mean enhanced alignment between the adaptively binarized prediction
    and the ground truth.

    Adaptive threshold: 2 * mean(pred), clamped to [0, 1]. The score is
    the plain pixel mean of the enhanced alignment map, so a perfect
    prediction scores exactly 1 on any grid size.
    """
    pred, gt = _check_pair(pred, gt)
    thr = min(2.0 * pred.mean(), 1.0)
    # An all-zero prediction has threshold 0 and stays all-zero.
    pb = (pred >= thr).astype(np.float64) if thr > 0 else np.zeros_like(pred)
    y = gt.mean()
    if y == 0.0:
        enhanced = 1.0 - pb
    elif y == 1.0:
        enhanced = pb
    else:
        f = pb - pb.mean()
        g = gt - y
        denom = f * f + g * g
        align = np.zeros_like(denom)
        nz = denom > 0
        align[nz] = 2.0 * f[nz] * g[nz] / denom[nz]
        enhanced = (align + 1.0) ** 2 / 4.0
    return float(np.clip(enhanced.mean(), 0.0, 1.0))


# --------------------------------------------------------------------------
# Overlap measures


def dice_iou(pred_bin: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """Dice and IoU of two binary masks; two empty masks score (1, 1)."""
    pred_bin = np.asarray(pred_bin, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred_bin.shape != gt.shape:
        raise ValueError(f"shape mismatch {pred_bin.shape} vs {gt.shape}")
    for name, m in (("pred_bin", pred_bin), ("gt", gt)):
        if not np.all((m == 0.0) | (m == 1.0)):
            raise ValueError(f"{name} must be binary {{0, 1}}")
    a = pred_bin > 0.5
    b = gt > 0.5
    inter = np.count_nonzero(a & b)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0, 1.0
    dice = 2.0 * inter / (a.sum() + b.sum())
    return float(dice), float(inter / union)


# --------------------------------------------------------------------------
# Sequence / dataset reporting


@dataclass
class MetricReport:
    s_alpha: float
    f_beta_w: float
    e_phi: float
    mae: float
    m_dice: float
    m_iou: float
    frames_scored: int

    COLUMNS = ("s_alpha", "f_beta_w", "e_phi", "mae", "m_dice", "m_iou")

    def values(self) -> tuple[float, ...]:
        return (self.s_alpha, self.f_beta_w, self.e_phi, self.mae,
                self.m_dice, self.m_iou)


def evaluate_frame(pred: np.ndarray, gt: np.ndarray,
                   bin_threshold: float = 0.5) -> tuple[float, ...]:
    pred, gt = _check_pair(pred, gt)
    d, i = dice_iou((pred >= bin_threshold).astype(np.float64), gt)
    return (s_measure(pred, gt), weighted_f_measure(pred, gt),
            e_measure(pred, gt), mae(pred, gt), d, i)


def evaluate_sequence(preds: list[np.ndarray], gts: list[np.ndarray],
                      skip_first: bool = True,
                      bin_threshold: float = 0.5) -> MetricReport:
    """Frame-mean metrics for one sequence.

    The first frame is excluded by default: under the semi-supervised
    protocol it is seeded with its ground truth, so scoring it would
    inflate every measure.
    """
    if len(preds) != len(gts):
        raise ValueError(f"{len(preds)} predictions vs {len(gts)} ground truths")
    start = 1 if skip_first else 0
    if len(preds) - start < 1:
        raise ValueError("no frames left to score")
    rows = [evaluate_frame(p, g, bin_threshold)
            for p, g in zip(preds[start:], gts[start:])]
    cols = np.asarray(rows).mean(axis=0)
    return MetricReport(*cols.tolist(), frames_scored=len(rows))


def aggregate_reports(reports: list[MetricReport]) -> MetricReport:
    """Unweighted mean over sequences."""
    if not reports:
        raise ValueError("nothing to aggregate")
    cols = np.asarray([r.values() for r in reports]).mean(axis=0)
    return MetricReport(*cols.tolist(),
                        frames_scored=sum(r.frames_scored for r in reports))


def format_table(rows: list[tuple[str, MetricReport]]) -> str:
    """Tab-separated table, one row per sequence, columns in report order."""
    lines = ["sequence\t" + "\t".join(MetricReport.COLUMNS)]
    for name, rep in rows:
        lines.append(name + "\t" + "\t".join(f"{v:.6f}" for v in rep.values()))
    return "\n".join(lines) + "\n"


def format_keyvalues(report: MetricReport, prefix: str = "") -> str:
    lines = [f"{prefix}{k}={v:.6f}"
             for k, v in zip(MetricReport.COLUMNS, report.values())]
    lines.append(f"{prefix}frames_scored={report.frames_scored}")
    return "\n".join(lines) + "\n"
