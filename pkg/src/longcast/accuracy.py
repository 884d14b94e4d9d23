"""Forecast accuracy measures.

Binary forecasts are scored by ePCP (expected proportion of correct
prediction) and AUROC; continuous forecasts by MAE and its scale-free
variant MASE.  Reports carry per-(time, series) cells plus pooled-window
cells, and can be aggregated over simulation replications.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import (
    DegenerateScaleError,
    EstimationError,
    ShapeError,
    UndefinedMeasureError,
)

__all__ = ["epcp", "auroc", "mae", "mase", "AccuracyReport", "aggregate"]


def _paired(y, p):
    y = np.asarray(y, dtype=float).ravel()
    p = np.asarray(p, dtype=float).ravel()
    if y.shape != p.shape:
        raise ShapeError(f"length mismatch: {y.shape} vs {p.shape}")
    if len(y) == 0:
        raise ShapeError("empty input")
    return y, p


def epcp(y, p_hat) -> float:
    """Expected proportion of correct prediction.

    Average probability assigned to the realized outcome: ``p`` where
    ``y = 1`` and ``1 - p`` where ``y = 0``.  Lies in [0, 1]; higher is
    better.
    """
    y, p = _paired(y, p_hat)
    if np.any((p < 0) | (p > 1)):
        raise ShapeError("probabilities must lie in [0, 1]")
    return float(np.mean(y * p + (1.0 - y) * (1.0 - p)))


def auroc(y, p_hat) -> float:
    """Area under the ROC curve via the rank (Mann-Whitney) statistic.

    Ties receive average ranks, matching the trapezoidal area under the
    TPR-vs-FPR curve swept over all thresholds.  Requires at least one
    positive and one negative case.
    """
    y, p = _paired(y, p_hat)
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMeasureError(
            f"AUROC undefined: {n_pos} positives, {n_neg} negatives"
        )
    ranks = rankdata(p)
    u = float(np.sum(ranks[y == 1])) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def mae(x, x_hat) -> float:
    """Mean absolute forecast error."""
    x, xh = _paired(x, x_hat)
    return float(np.mean(np.abs(x - xh)))


def mase(x, x_hat, train_history, subjects=None) -> float:
    """Mean absolute scaled error.

    Each subject's absolute error is divided by that subject's in-sample
    naive one-step MAE, ``mean_h |X_h - X_{h-1}|`` over the training
    window, then averaged.  ``x``/``x_hat`` hold one value per subject and
    ``train_history`` is (n_subjects, T) with T >= 2.
    """
    x, xh = _paired(x, x_hat)
    hist = np.asarray(train_history, dtype=float)
    if hist.ndim != 2 or hist.shape[0] != len(x):
        raise ShapeError(
            f"train_history shape {hist.shape} does not match {len(x)} forecasts"
        )
    if hist.shape[1] < 2:
        raise ShapeError("MASE needs at least 2 training occasions")
    scale = np.mean(np.abs(np.diff(hist, axis=1)), axis=1)
    if np.any(scale == 0):
        idx = int(np.argmax(scale == 0))
        label = subjects[idx] if subjects is not None else idx
        raise DegenerateScaleError(
            f"constant training history for subject {label!r}: "
            "naive one-step MAE is zero",
            subject=label,
        )
    return float(np.mean(np.abs(x - xh) / scale))


@dataclass
class AccuracyReport:
    """One measure's values keyed by (time_label, series) cells.

    ``time_label`` is a single occasion (``"5"``) or a pooled window
    (``"5 to 8"``); ``series`` is a response or covariate name.
    """

    measure: str
    cells: dict = field(default_factory=dict)

    def set(self, time_label: str, series: str, value: float) -> None:
        self.cells[(str(time_label), str(series))] = float(value)

    def get(self, time_label: str, series: str) -> float:
        return self.cells[(str(time_label), str(series))]

    def check_bounds(self) -> None:
        vals = np.array(list(self.cells.values()))
        if self.measure in ("epcp", "auroc"):
            if np.any((vals < 0) | (vals > 1)):
                raise ShapeError(f"{self.measure} values outside [0, 1]")
        elif np.any(vals < 0):
            raise ShapeError(f"{self.measure} values must be non-negative")


def aggregate(reports) -> dict:
    """Cellwise replication summary of identically shaped reports.

    Returns ``{cell: {"mean", "sd", "se", "n"}}`` where ``sd`` is the
    sample standard deviation of the replication values and ``se`` is
    ``sd / sqrt(R)``.  Requires R >= 2 reports with identical cells.
    """
    reports = list(reports)
    if len(reports) < 2:
        raise EstimationError(f"aggregation needs >= 2 reports, got {len(reports)}")
    keys = set(reports[0].cells)
    for r in reports[1:]:
        if set(r.cells) != keys or r.measure != reports[0].measure:
            raise ShapeError("reports do not share the same cells/measure")
    out = {}
    for key in keys:
        vals = np.array([r.cells[key] for r in reports])
        sd = float(np.std(vals, ddof=1))
        out[key] = {
            "mean": float(np.mean(vals)),
            "sd": sd,
            "se": sd / np.sqrt(len(vals)),
            "n": len(vals),
        }
    return out
