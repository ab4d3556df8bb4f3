"""Pixel-level segmentation metrics.

TPA counts agreement over every pixel; FgPA restricts the count to
binarized-foreground (ink) pixels, so any change confined to background
pixels leaves it bit-identical.  FgPE = 1 - FgPA.  Reports carry raw counts
so pages pool into dataset-level (micro-averaged) scores by summation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError


@dataclass
class MetricsReport:
    total: int
    correct: int
    foreground: int
    fg_correct: int
    confusion: np.ndarray = field(default=None)  # (C+1, C+1) gt x pred, foreground only

    @property
    def tpa(self) -> float:
        return self.correct / self.total

    @property
    def fgpa(self):
        """Foreground pixel accuracy; None when the page has no ink."""
        if self.foreground == 0:
            return None
        return self.fg_correct / self.foreground

    @property
    def fgpe(self):
        return None if self.fgpa is None else 1.0 - self.fgpa


def evaluate(gt: np.ndarray, pred: np.ndarray, bin_mask: np.ndarray,
             num_classes: int | None = None) -> MetricsReport:
    """Compute TPA/FgPA counts for one page."""
    gt = np.asarray(gt).astype(np.int64, copy=False)
    pred = np.asarray(pred).astype(np.int64, copy=False)
    bin_mask = np.asarray(bin_mask)
    if not (gt.shape == pred.shape == bin_mask.shape):
        raise DataError(
            f"shape mismatch: gt {gt.shape}, pred {pred.shape}, bin {bin_mask.shape}"
        )
    match = gt == pred
    fg = bin_mask == 1
    c = int(num_classes if num_classes is not None else max(gt.max(), pred.max(), 1))
    confusion = np.zeros((c + 1, c + 1), dtype=np.int64)
    np.add.at(confusion, (np.clip(gt[fg], 0, c), np.clip(pred[fg], 0, c)), 1)
    report = MetricsReport(
        total=int(match.size),
        correct=int(match.sum()),
        foreground=int(fg.sum()),
        fg_correct=int((match & fg).sum()),
        confusion=confusion,
    )
    if report.foreground == 0:
        warnings.warn("page has no foreground pixels; FgPA is undefined")
    return report


def pool(reports: list[MetricsReport]) -> MetricsReport:
    """Micro-average: sum pixel counts across pages, then divide."""
    if not reports:
        raise DataError("cannot pool an empty report list")
    cmax = max(r.confusion.shape[0] for r in reports if r.confusion is not None)
    confusion = np.zeros((cmax, cmax), dtype=np.int64)
    for r in reports:
        if r.confusion is not None:
            k = r.confusion.shape[0]
            confusion[:k, :k] += r.confusion
    return MetricsReport(
        total=sum(r.total for r in reports),
        correct=sum(r.correct for r in reports),
        foreground=sum(r.foreground for r in reports),
        fg_correct=sum(r.fg_correct for r in reports),
        confusion=confusion,
    )


def mean_std(values: list[float]):
    """Unweighted mean and sample (n-1) standard deviation.

    A single value yields std None; that distinction survives into reports.
    """
    if not values:
        raise DataError("cannot aggregate an empty list")
    mean = sum(values) / len(values)
    if len(values) == 1:
        return mean, None
    var = sum((v - mean) ** 2 for v in values) / (len(values) - 1)
    return mean, math.sqrt(var)


def aggregate(reports: list[MetricsReport]) -> dict:
    """Fold-level mean +- std of TPA/FgPA/FgPE.

    Reports with undefined FgPA are excluded from the FgPA/FgPE aggregation
    (with a warning), never treated as 0 or 1.
    """
    if not reports:
        raise DataError("cannot aggregate an empty report list")
    out = {"tpa": mean_std([r.tpa for r in reports])}
    defined = [r.fgpa for r in reports if r.fgpa is not None]
    if len(defined) < len(reports):
        warnings.warn(f"{len(reports) - len(defined)} report(s) had undefined FgPA; excluded")
    if defined:
        out["fgpa"] = mean_std(defined)
        out["fgpe"] = mean_std([1.0 - v for v in defined])
    else:
        out["fgpa"] = (None, None)
        out["fgpe"] = (None, None)
    return out
