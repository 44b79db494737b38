"""Evaluation metrics: AUROC for ID-vs-OOD discrimination and Dice overlap.

ID images are the negative class, OOD images the positive class. AUROC is
the Mann-Whitney statistic (ties earn half credit), which equals the
trapezoidal area under the ROC curve.
"""

from __future__ import annotations

import numpy as np

from .core import LabelVolume
from .errors import DataError, InsufficientDataError, ShapeError


def auroc(negatives, positives) -> float:
    """Probability that a random positive outscores a random negative.

    Computed by pair counting over all (negative, positive) pairs with
    half credit for ties; exact (integer counts, one final division), so
    results are invariant under any strictly increasing score transform.
    """
    neg = np.asarray(negatives, dtype=np.float64).ravel()
    pos = np.asarray(positives, dtype=np.float64).ravel()
    if neg.size == 0 or pos.size == 0:
        raise InsufficientDataError("AUROC needs at least one negative and one positive score")
    if not (np.isfinite(neg).all() and np.isfinite(pos).all()):
        raise DataError("AUROC scores must all be finite")
    neg_sorted = np.sort(neg)
    lo = np.searchsorted(neg_sorted, pos, side="left")
    hi = np.searchsorted(neg_sorted, pos, side="right")
    wins = int(lo.sum())
    ties = int((hi - lo).sum())
    return (wins + 0.5 * ties) / (neg.size * pos.size)


def dice(pred: LabelVolume, truth: LabelVolume, class_id: int) -> float:
    """Dice overlap 2|X n Y| / (|X| + |Y|) of one class between two label maps.

    Convention: returns 1.0 when the class is empty in both volumes, so
    all-negative inputs stay well-defined. Note that conventions differ
    across tools; this one is fixed here and used throughout the reports.
    """
    if pred.shape != truth.shape:
        raise ShapeError(f"label shapes differ: {pred.shape} vs {truth.shape}")
    if class_id < 0 or class_id >= min(pred.num_classes, truth.num_classes):
        raise ValueError(f"class_id {class_id} out of range for the given volumes")
    x = pred.labels == class_id
    y = truth.labels == class_id
    denom = int(x.sum()) + int(y.sum())
    if denom == 0:
        return 1.0
    return 2.0 * int(np.logical_and(x, y).sum()) / denom


def mean_std(values) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation (divide by n)."""
    arr = np.asarray(values, dtype=np.float64).ravel()
    if arr.size == 0:
        raise InsufficientDataError("mean_std needs at least one value")
    return float(arr.mean()), float(arr.std(ddof=0))
