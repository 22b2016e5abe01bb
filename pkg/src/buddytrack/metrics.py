"""One-pass evaluation metrics: success/precision curves and their summaries."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import BoundingBox, center_error, vor

__all__ = ["OpeReport", "ope_metrics", "SUCCESS_THRESHOLDS", "PRECISION_THRESHOLDS"]

SUCCESS_THRESHOLDS = np.linspace(0.0, 1.0, 101)
PRECISION_THRESHOLDS = np.arange(0, 51, dtype=float)


@dataclass
class OpeReport:
    """Success/precision curves with AUC and precision@20 summaries."""

    success_curve: np.ndarray      # 101 points over overlap thresholds [0, 1]
    precision_curve: np.ndarray    # 51 points over CLE thresholds [0, 50] px
    auc: float
    precision_at_20: float

    def to_rows(self) -> list[tuple[str, str, float]]:
        rows = [
            ("success", f"{thr:.2f}", float(val))
            for thr, val in zip(SUCCESS_THRESHOLDS, self.success_curve)
        ]
        rows += [
            ("precision", f"{int(thr)}", float(val))
            for thr, val in zip(PRECISION_THRESHOLDS, self.precision_curve)
        ]
        rows.append(("auc", "", self.auc))
        rows.append(("precision_at_20", "", self.precision_at_20))
        return rows


def ope_metrics(results: list[BoundingBox], truth: list[BoundingBox]) -> OpeReport:
    """Evaluate predicted boxes against groundtruth, frame by frame.

    A frame succeeds at overlap threshold ``t`` when its overlap strictly
    exceeds ``t`` (the top threshold 1.0 counts exact-unit overlap so a
    perfect trajectory reaches AUC 1.0); precision counts frames whose
    center error is at most the pixel threshold.  AUC is the mean of the
    success curve.
    """
    if len(results) != len(truth):
        raise ValueError(f"{len(results)} results vs {len(truth)} groundtruth boxes")
    if not results:
        raise ValueError("nothing to evaluate")
    overlaps = np.array([vor(r, g) for r, g in zip(results, truth)])
    errors = np.array([center_error(r, g) for r, g in zip(results, truth)])

    success = np.array(
        [
            np.mean(overlaps >= thr) if thr >= 1.0 else np.mean(overlaps > thr)
            for thr in SUCCESS_THRESHOLDS
        ]
    )
    precision = np.array([np.mean(errors <= thr) for thr in PRECISION_THRESHOLDS])
    return OpeReport(
        success_curve=success,
        precision_curve=precision,
        auc=float(success.mean()),
        precision_at_20=float(precision[20]),
    )
