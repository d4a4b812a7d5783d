"""Intensity-distribution and segmentation metrics.

Hellinger distance between two Gaussian class distributions, confusion-count
accumulation over hard per-pixel assignments, and the background-excluded
mean Jaccard accuracy (MAcc). All functions are pure; ConfusionCounts merge
is associative and commutative, so per-image accumulation can run in
parallel and be combined afterwards.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError


def hellinger(mu1: float, sigma1: float, mu2: float, sigma2: float) -> float:
    """Hellinger distance between N(mu1, sigma1^2) and N(mu2, sigma2^2), in [0, 1].

    Degenerate sigmas take the mathematical limit: two point masses are at
    distance 0 when equal and 1 otherwise, and a point mass is mutually
    singular with any spread distribution (distance 1).
    """
    if sigma1 < 0 or sigma2 < 0:
        raise ValueError(f"sigmas must be >= 0, got {sigma1}, {sigma2}")
    if sigma1 == 0 and sigma2 == 0:
        return 0.0 if mu1 == mu2 else 1.0
    if sigma1 == 0 or sigma2 == 0:
        return 1.0
    var_sum = sigma1 * sigma1 + sigma2 * sigma2
    bc = math.sqrt(2.0 * sigma1 * sigma2 / var_sum) * math.exp(
        -0.25 * (mu1 - mu2) ** 2 / var_sum)
    return math.sqrt(max(1.0 - bc, 0.0))


def hd_grid(reference, delta_mus, delta_sigmas) -> np.ndarray:
    """Matrix of distances between the reference class and shifted variants.

    Row i, column j holds hellinger(mu, sigma, mu + delta_mus[j],
    sigma + delta_sigmas[i]).
    """
    mu, sigma = reference.mu, reference.sigma
    return np.array([[hellinger(mu, sigma, mu + dm, sigma + ds)
                      for dm in delta_mus] for ds in delta_sigmas])


@dataclass
class ConfusionCounts:
    """Per-class pixel counts of true positives, false positives, false negatives."""

    class_count: int
    tp: np.ndarray = field(default=None)
    fp: np.ndarray = field(default=None)
    fn: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.class_count < 2:
            raise ValueError(f"need at least 2 classes, got {self.class_count}")
        for name in ("tp", "fp", "fn"):
            if getattr(self, name) is None:
                setattr(self, name, np.zeros(self.class_count, dtype=np.int64))

    def merge(self, other: "ConfusionCounts") -> "ConfusionCounts":
        if other.class_count != self.class_count:
            raise ValueError("class_count mismatch in merge")
        return ConfusionCounts(self.class_count, self.tp + other.tp,
                               self.fp + other.fp, self.fn + other.fn)


def accumulate_confusion(pred_labels, true_labels, class_count: int,
                         into: ConfusionCounts | None = None) -> ConfusionCounts:
    """Accumulate hard-assignment confusion counts over one or more label maps."""
    pred = np.asarray(pred_labels).ravel()
    true = np.asarray(true_labels).ravel()
    if pred.shape != true.shape:
        raise ShapeError(f"prediction shape {np.asarray(pred_labels).shape} != "
                         f"truth shape {np.asarray(true_labels).shape}")
    if pred.size and (pred.max() >= class_count or true.max() >= class_count
                      or pred.min() < 0 or true.min() < 0):
        raise ValueError(f"labels out of range for {class_count} classes")
    joint = np.bincount(true * class_count + pred,
                        minlength=class_count * class_count)
    matrix = joint.reshape(class_count, class_count)
    counts = ConfusionCounts(
        class_count,
        tp=np.diag(matrix).astype(np.int64),
        fp=(matrix.sum(axis=0) - np.diag(matrix)).astype(np.int64),
        fn=(matrix.sum(axis=1) - np.diag(matrix)).astype(np.int64),
    )
    return counts if into is None else into.merge(counts)


def argmax_labels(probs: np.ndarray) -> np.ndarray:
    """Hard per-pixel assignment; ties break toward the lowest class index."""
    probs = np.asarray(probs)
    return probs.argmax(axis=probs.ndim - 3)


def macc(counts: ConfusionCounts) -> float:
    """Mean over non-background classes of TP / (TP + FP + FN).

    A target class absent from both prediction and truth (zero denominator)
    contributes 1.0; background (class 0) never enters the sum.
    """
    total = 0.0
    c = counts.class_count
    for i in range(1, c):
        denom = counts.tp[i] + counts.fp[i] + counts.fn[i]
        total += counts.tp[i] / denom if denom else 1.0
    return total / (c - 1)
