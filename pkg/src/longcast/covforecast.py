"""Transition-model forecasting of time-varying continuous covariates.

A covariate is regressed on its own one or two lags by pooled least
squares over all subjects; forecasts are produced recursively, feeding
predicted values back in as the horizon grows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LongitudinalDataset
from .errors import InvalidArgumentError, RankDeficiencyError

__all__ = ["TransitionFit", "fit_tm", "forecast_tm", "insample_errors"]


@dataclass(frozen=True)
class TransitionFit:
    """Pooled autoregression of a covariate on its own lags."""

    covariate: str
    order: int
    coef: np.ndarray         # (order + 1,): intercept, lag-1[, lag-2]
    resid_var: float
    n_obs: int

    def to_dict(self) -> dict:
        return {
            "covariate": self.covariate,
            "order": self.order,
            "coef": [float(c) for c in self.coef],
            "resid_var": float(self.resid_var),
            "n_obs": self.n_obs,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionFit":
        return cls(
            covariate=d["covariate"],
            order=int(d["order"]),
            coef=np.asarray(d["coef"], dtype=float),
            resid_var=float(d["resid_var"]),
            n_obs=int(d["n_obs"]),
        )


def _lag_pairs(ds: LongitudinalDataset, covariate: str, order: int):
    x = ds.covariates[covariate]
    cols = [np.ones(x[:, order:].size)]
    for lag in range(1, order + 1):
        cols.append(x[:, order - lag : x.shape[1] - lag].ravel())
    design = np.column_stack(cols)
    target = x[:, order:].ravel()
    return design, target


def fit_tm(ds: LongitudinalDataset, covariate: str, order: int = 1) -> TransitionFit:
    """Least-squares fit of a first- or second-order transition model.

    Pools all subjects' (current, lagged) pairs: order 1 uses occasions
    2..T, order 2 uses 3..T.
    """
    if order not in (1, 2):
        raise InvalidArgumentError(f"order must be 1 or 2, got {order}")
    if covariate not in ds.covariates:
        raise InvalidArgumentError(f"unknown covariate {covariate!r}")
    if ds.n_times < order + 1:
        raise InvalidArgumentError(
            f"need at least {order + 1} occasions for order {order}, have {ds.n_times}"
        )
    design, target = _lag_pairs(ds, covariate, order)
    gram = design.T @ design
    if np.linalg.matrix_rank(gram) < gram.shape[0]:
        raise RankDeficiencyError(
            f"degenerate design for covariate {covariate!r} "
            "(constant or collinear lags)"
        )
    coef = np.linalg.solve(gram, design.T @ target)
    resid = target - design @ coef
    dof = max(len(target) - len(coef), 1)
    return TransitionFit(
        covariate=covariate,
        order=order,
        coef=coef,
        resid_var=float(resid @ resid / dof),
        n_obs=len(target),
    )


def forecast_tm(fit: TransitionFit, ds: LongitudinalDataset, horizon: int) -> np.ndarray:
    """Recursive point forecasts, shape (N, horizon).

    The first step uses the observed tail of the training window; later
    steps feed earlier forecasts back in.
    """
    if horizon < 1:
        raise InvalidArgumentError(f"horizon must be >= 1, got {horizon}")
    x = ds.covariates[fit.covariate]
    if x.shape[1] < fit.order:
        raise InvalidArgumentError(
            f"need the last {fit.order} observations to start the recursion"
        )
    lags = [x[:, -lag] for lag in range(1, fit.order + 1)]  # lag-1 first
    out = np.empty((x.shape[0], horizon))
    for h in range(horizon):
        pred = fit.coef[0] + sum(fit.coef[i + 1] * lags[i] for i in range(fit.order))
        out[:, h] = pred
        lags = [pred] + lags[: fit.order - 1]
    return out


def insample_errors(fit: TransitionFit, ds: LongitudinalDataset) -> np.ndarray:
    """One-step residuals on the training window, shape (N, T - order)."""
    x = ds.covariates[fit.covariate]
    design, target = _lag_pairs(ds, fit.covariate, fit.order)
    resid = target - design @ fit.coef
    return resid.reshape(x.shape[0], x.shape[1] - fit.order)
