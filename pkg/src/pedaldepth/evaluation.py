"""Frame-wise evaluation metrics for continuous pedal depth predictions.

Covers binary and four-class precision/recall/F1 (support-weighted across
classes), MSE/MAE, accuracy with tolerance, and balanced accuracy with
tolerance.  The balanced variant bins ground truth onto the 128 discrete
CC values and weights each occupied bin by the inverse square root of its
frequency, countering the concentration of piano data at the pedal
extremes.

Binary on/off uses the 63/64 CC split: normalized values >= 63.5/127 count
as on, for both labels and predictions.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .containers import write_text_atomic
from .errors import DataError
from .targets import TAU_ON

N_CC_BINS = 128
FOUR_CLASS_NAMES = ("quarter", "half", "three_quarter", "full")
DEFAULT_THETA_GRID = tuple(round(0.01 * k, 2) for k in range(1, 41))


@dataclass
class MetricsReport:
    binary: tuple[float, float, float]
    four_class: tuple[float, float, float]
    mse: float
    mae: float
    tolerance_curve: list[tuple[float, float, float]] = field(default_factory=list)
    n_frames: int = 0

    def to_dict(self) -> dict:
        return {
            "binary": {"precision": self.binary[0], "recall": self.binary[1], "f1": self.binary[2]},
            "four_class": {
                "precision": self.four_class[0],
                "recall": self.four_class[1],
                "f1": self.four_class[2],
            },
            "mse": self.mse,
            "mae": self.mae,
            "tolerance_curve": [
                {"theta": t, "simple_acc": s, "balanced_acc": b}
                for t, s, b in self.tolerance_curve
            ],
            "n_frames": self.n_frames,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def write_json(self, path: str) -> None:
        write_text_atomic(path, self.to_json())

    def write_tolerance_csv(self, path: str) -> None:
        buf = io.StringIO()
        writer = csv.writer(buf)
        writer.writerow(["theta", "simple_acc", "balanced_acc"])
        for theta, simple, balanced in self.tolerance_curve:
            writer.writerow([f"{theta:.2f}", repr(simple), repr(balanced)])
        write_text_atomic(path, buf.getvalue())


def binarize(depth: np.ndarray, tau: float = TAU_ON) -> np.ndarray:
    """Pedal on iff depth >= tau (the >= convention puts the boundary on)."""
    return np.asarray(depth) >= tau


def quantize_4class(depth: np.ndarray) -> np.ndarray:
    """Equal-width quarters, left-closed: [0,.25) [.25,.5) [.5,.75) [.75,1]."""
    depth = np.asarray(depth)
    return np.minimum((depth * 4).astype(np.int64), 3)


def prf(pred_labels: np.ndarray, gt_labels: np.ndarray, n_classes: int) -> tuple[float, float, float]:
    """Support-weighted precision/recall/F1; zero-support classes are skipped."""
    pred_labels = np.asarray(pred_labels).ravel()
    gt_labels = np.asarray(gt_labels).ravel()
    if pred_labels.size == 0:
        raise DataError("cannot compute PRF on empty label arrays")
    if pred_labels.shape != gt_labels.shape:
        raise DataError("prediction and ground-truth label lengths differ")

    weighted_p = weighted_r = weighted_f = 0.0
    total_support = 0
    for cls in range(n_classes):
        support = int((gt_labels == cls).sum())
        if support == 0:
            continue
        tp = int(((pred_labels == cls) & (gt_labels == cls)).sum())
        pred_count = int((pred_labels == cls).sum())
        precision = tp / pred_count if pred_count else 0.0
        recall = tp / support
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        weighted_p += support * precision
        weighted_r += support * recall
        weighted_f += support * f1
        total_support += support
    return (weighted_p / total_support, weighted_r / total_support, weighted_f / total_support)


def regression_errors(pred: np.ndarray, gt: np.ndarray) -> tuple[float, float]:
    """(MSE, MAE) over the frame pairs."""
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if pred.size == 0:
        raise DataError("cannot compute regression errors on empty arrays")
    if pred.shape != gt.shape:
        raise DataError("prediction and ground-truth lengths differ")
    diff = pred - gt
    return float(np.mean(diff**2)), float(np.mean(np.abs(diff)))


def accuracy_with_tolerance(pred: np.ndarray, gt: np.ndarray, theta: float) -> float:
    """Fraction of frames whose absolute error is within theta."""
    if theta < 0:
        raise DataError(f"tolerance must be nonnegative, got {theta}")
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    return float(np.mean(np.abs(pred - gt) <= theta))


def balanced_accuracy_with_tolerance(
    pred: np.ndarray,
    gt: np.ndarray,
    theta: float,
    n_bins: int = N_CC_BINS,
) -> float:
    """Per-CC-bin accuracy averaged with 1/sqrt(frequency) weights.

    Ground truth is assigned to bins by its CC value (bin i holds value
    i/127); empty bins are excluded from both sums.
    """
    if theta < 0:
        raise DataError(f"tolerance must be nonnegative, got {theta}")
    pred = np.asarray(pred, dtype=np.float64).ravel()
    gt = np.asarray(gt, dtype=np.float64).ravel()
    if gt.size == 0:
        raise DataError("cannot compute balanced accuracy on empty arrays")
    bins = np.clip(np.round(gt * (n_bins - 1)).astype(np.int64), 0, n_bins - 1)
    correct = np.abs(pred - gt) <= theta

    freq = np.bincount(bins, minlength=n_bins)
    hits = np.bincount(bins, weights=correct.astype(np.float64), minlength=n_bins)
    occupied = freq > 0
    if not occupied.any():
        raise DataError("all bins are empty")
    acc = hits[occupied] / freq[occupied]
    weights = 1.0 / np.sqrt(freq[occupied])
    return float((weights * acc).sum() / weights.sum())


def evaluate(
    pred_curves: dict[str, np.ndarray],
    gt_curves: dict[str, np.ndarray],
    theta_grid: tuple[float, ...] = DEFAULT_THETA_GRID,
) -> MetricsReport:
    """Full metric suite over aligned prediction/ground-truth curve pairs.

    Curves are concatenated across pieces; predictions are clamped to [0, 1]
    before any metric is computed.
    """
    missing = sorted(set(gt_curves) - set(pred_curves)) + sorted(set(pred_curves) - set(gt_curves))
    if missing:
        raise DataError(f"unmatched piece identifiers: {', '.join(missing)}")
    if not gt_curves:
        raise DataError("no curve pairs to evaluate")

    pred_parts, gt_parts = [], []
    for piece_id in sorted(gt_curves):
        p = np.asarray(pred_curves[piece_id], dtype=np.float64).ravel()
        g = np.asarray(gt_curves[piece_id], dtype=np.float64).ravel()
        if p.shape != g.shape:
            raise DataError(
                f"{piece_id}: prediction length {p.shape[0]} != ground truth {g.shape[0]}"
            )
        pred_parts.append(p)
        gt_parts.append(g)
    pred = np.clip(np.concatenate(pred_parts), 0.0, 1.0)
    gt = np.concatenate(gt_parts)

    binary = prf(binarize(pred), binarize(gt), 2)
    four = prf(quantize_4class(pred), quantize_4class(gt), 4)
    mse, mae = regression_errors(pred, gt)
    curve = [
        (
            float(theta),
            accuracy_with_tolerance(pred, gt, theta),
            balanced_accuracy_with_tolerance(pred, gt, theta),
        )
        for theta in theta_grid
    ]
    return MetricsReport(
        binary=binary,
        four_class=four,
        mse=mse,
        mae=mae,
        tolerance_curve=curve,
        n_frames=int(gt.size),
    )
