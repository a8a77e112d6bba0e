"""Mask and image comparison metrics, and binary-classification scoring."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

BINARIZE_THRESHOLD = 0.5


class MetricError(ValueError):
    pass


def binarize(prob, threshold: float = BINARIZE_THRESHOLD) -> np.ndarray:
    return (np.asarray(prob) >= threshold).astype(np.uint8)


def _same_dims(a, b):
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise MetricError(f"dimension mismatch: {a.shape} vs {b.shape}")
    return a, b


def iou(a, b) -> float:
    """Intersection over union of two binary masks; 1.0 when both are empty."""
    a, b = _same_dims(a, b)
    a, b = a.astype(bool), b.astype(bool)
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def _diff(x, y):
    x, y = _same_dims(x, y)
    return x.astype(np.float64) - y.astype(np.float64)


def mse(x, y) -> float:
    return float(np.mean(_diff(x, y) ** 2))


def linf(x, y) -> float:
    return float(np.max(np.abs(_diff(x, y))))


def l2(x, y) -> float:
    return float(np.sqrt(np.sum(_diff(x, y) ** 2)))


def center_point(mask) -> tuple[int, int]:
    """Representative in-mask pixel ``(x, y)`` used as a mask ID.

    The rounded centroid when it lies on the mask, otherwise the mask pixel
    nearest to the (unrounded) centroid, ties broken by row then column.
    """
    mask = np.asarray(mask).astype(bool)
    if mask.ndim != 2:
        raise MetricError(f"mask must be 2-D, got shape {mask.shape}")
    ys, xs = np.nonzero(mask)
    if ys.size == 0:
        raise MetricError("center point of an empty mask")
    cy, cx = ys.mean(), xs.mean()
    ry, rx = int(math.floor(cy + 0.5)), int(math.floor(cx + 0.5))
    if mask[ry, rx]:
        return rx, ry
    # np.nonzero is row-major, so argmin keeps the lowest (row, col) on ties
    d2 = (ys - cy) ** 2 + (xs - cx) ** 2
    i = int(np.argmin(d2))
    return int(xs[i]), int(ys[i])


def mean_iou(reference: Mapping, candidate: Mapping) -> float:
    """Mean IoU over the mask IDs of ``reference``; missing IDs score 0."""
    if not reference:
        raise MetricError("empty reference mask set")
    scores = [iou(m, candidate[k]) if k in candidate else 0.0 for k, m in reference.items()]
    return float(np.mean(scores))


# -- grid classification -------------------------------------------------------


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def add(self, other: "Counts") -> None:
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        self.tn += other.tn

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def scores(self) -> tuple[float, float, float, bool]:
        """Precision, recall, F1 and whether precision was undefined."""
        predicted = self.tp + self.fp
        undefined = predicted == 0
        precision = 0.0 if undefined else self.tp / predicted
        recall = self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0
        denom = 2 * self.tp + self.fp + self.fn
        f1 = 2 * self.tp / denom if denom else 0.0
        return precision, recall, f1, undefined


def count_cells(truth: Iterable[int], predicted: Iterable[int], n_cells: int = 9) -> Counts:
    truth, predicted = set(truth), set(predicted)
    for cell in truth | predicted:
        if not 0 <= cell < n_cells:
            raise MetricError(f"cell {cell} out of range 0..{n_cells - 1}")
    tp = len(truth & predicted)
    fp = len(predicted - truth)
    fn = len(truth - predicted)
    return Counts(tp, fp, fn, n_cells - tp - fp - fn)


@dataclass
class ScoreReport:
    """Pooled precision/recall/F1 plus their spread across permutation repeats."""

    precision: float
    recall: float
    f1: float
    counts: Counts
    precision_undefined: bool
    per_permutation: list[dict] = field(default_factory=list)

    def _spread(self, key):
        vals = [p[key] for p in self.per_permutation]
        return float(np.mean(vals)), float(np.std(vals))

    @property
    def precision_mean_std(self):
        return self._spread("precision")

    @property
    def recall_mean_std(self):
        return self._spread("recall")

    @property
    def f1_mean_std(self):
        return self._spread("f1")

    def as_dict(self) -> dict:
        p, ps = self.precision_mean_std
        r, rs = self.recall_mean_std
        f, fs = self.f1_mean_std
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "precision_undefined": self.precision_undefined,
            "tp": self.counts.tp,
            "fp": self.counts.fp,
            "fn": self.counts.fn,
            "tn": self.counts.tn,
            "precision_mean": p,
            "precision_std": ps,
            "recall_mean": r,
            "recall_std": rs,
            "f1_mean": f,
            "f1_std": fs,
            "permutations": len(self.per_permutation),
        }


def score_grid(
    trials: Sequence[Sequence[tuple[Iterable[int], Iterable[int]]]],
    n_cells: int = 9,
    targets_per_grid: int = 1,
) -> ScoreReport:
    """Score grid trials as per-cell binary classification.

    ``trials[r]`` holds the ``(truth_cells, predicted_cells)`` pairs of every
    grid for permutation repeat ``r``. Counts are pooled over everything for
    the headline scores; each repeat is also scored on its own.
    """
    if not trials:
        raise MetricError("no permutation repeats to score")
    pooled = Counts()
    per_perm = []
    for repeat in trials:
        c = Counts()
        for truth, predicted in repeat:
            truth = set(truth)
            if len(truth) != targets_per_grid:
                raise MetricError(
                    f"grid declares {len(truth)} target cells, expected {targets_per_grid}"
                )
            c.add(count_cells(truth, predicted, n_cells))
        p, r, f, undefined = c.scores()
        per_perm.append({"precision": p, "recall": r, "f1": f, "precision_undefined": undefined})
        pooled.add(c)
    p, r, f, undefined = pooled.scores()
    return ScoreReport(p, r, f, pooled, undefined, per_perm)
