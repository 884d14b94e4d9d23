"""Marginal logistic models for longitudinal binary data, fit by GEE.

Three layouts are supported:

* ``umm``  - one response, one coefficient vector, clusters of T occasions;
* ``mmm1`` - k responses sharing covariates, response-specific coefficient
  vectors, clusters stacking all k*T cells of a subject;
* ``mmm2`` - k responses with response-specific design rows (indicator
  expansion) and a single shared coefficient vector.

Estimation alternates Fisher-scoring updates of the coefficients with
moment re-estimation of the working correlation from Pearson residuals;
the dispersion is fixed at 1 for binary data.  Cluster cells are ordered
time-major with response fastest, i.e. cell index k*(t-1)+j.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .dataset import DesignMatrix, LongitudinalDataset, ModelFormula, design_matrix
from .errors import (
    ConvergenceError,
    EstimationError,
    InvalidArgumentError,
    RankDeficiencyError,
    ShapeError,
)

__all__ = [
    "WorkingCorrelation",
    "GeeFit",
    "fit_gee",
    "estimate_working_corr",
    "build_correlation",
    "forecast_marginal",
    "fitted_marginal",
]

CORR_KINDS = ("independence", "exchangeable", "ar1", "unstructured")
MU_FLOOR = 1e-10


@dataclass(frozen=True)
class WorkingCorrelation:
    """Working correlation structure: a kind plus estimated parameters."""

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in CORR_KINDS:
            raise InvalidArgumentError(
                f"unknown working correlation {self.kind!r}; choose from {CORR_KINDS}"
            )


@dataclass
class GeeFit:
    """GEE estimates with naive and sandwich coefficient covariances."""

    kind: str
    formula: ModelFormula
    columns: tuple
    coef_labels: tuple
    coef: np.ndarray  # flat, in coef_labels order
    corr: WorkingCorrelation
    naive_cov: np.ndarray
    sandwich_cov: np.ndarray
    n_iter: int
    converged: bool
    final_update: float

    @property
    def coef_by_response(self) -> np.ndarray:
        """(k, p) view for mmm1; (1, p) for umm/mmm2."""
        if self.kind == "mmm1":
            k = len(self.formula.responses)
            return self.coef.reshape(k, -1)
        return self.coef.reshape(1, -1)

    def coef_se(self) -> np.ndarray:
        return np.sqrt(np.diag(self.sandwich_cov))

    def to_json(self) -> str:
        return json.dumps(
            {
                "model": "gee",
                "kind": self.kind,
                "responses": list(self.formula.responses),
                "terms": list(self.formula.terms),
                "per_response": self.formula.per_response,
                "columns": list(self.columns),
                "coef_labels": list(self.coef_labels),
                "coef": [float(c) for c in self.coef],
                "corr_kind": self.corr.kind,
                "corr_params": _params_to_jsonable(self.corr.params),
                "naive_cov": self.naive_cov.tolist(),
                "sandwich_cov": self.sandwich_cov.tolist(),
                "n_iter": self.n_iter,
                "converged": self.converged,
                "final_update": self.final_update,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "GeeFit":
        d = json.loads(text)
        if d.get("model") != "gee":
            raise InvalidArgumentError("not a GEE fit file")
        formula = ModelFormula(
            responses=tuple(d["responses"]),
            terms=tuple(d["terms"]),
            per_response=bool(d["per_response"]),
        )
        return cls(
            kind=d["kind"],
            formula=formula,
            columns=tuple(d["columns"]),
            coef_labels=tuple(d["coef_labels"]),
            coef=np.asarray(d["coef"], dtype=float),
            corr=WorkingCorrelation(d["corr_kind"], _params_from_jsonable(d["corr_params"])),
            naive_cov=np.asarray(d["naive_cov"], dtype=float),
            sandwich_cov=np.asarray(d["sandwich_cov"], dtype=float),
            n_iter=int(d["n_iter"]),
            converged=bool(d["converged"]),
            final_update=float(d["final_update"]),
        )


def _params_to_jsonable(params: dict) -> dict:
    out = {}
    for key, val in params.items():
        out[key] = val.tolist() if isinstance(val, np.ndarray) else val
    return out


def _params_from_jsonable(params: dict) -> dict:
    out = {}
    for key, val in params.items():
        out[key] = np.asarray(val, dtype=float) if isinstance(val, list) else val
    return out


def _infer_kind(formula: ModelFormula) -> str:
    if formula.per_response:
        return "umm" if len(formula.responses) == 1 else "mmm1"
    return "mmm2"


def _stacked_layout(ds: LongitudinalDataset, formula: ModelFormula, design: DesignMatrix):
    """Return (y, mask, x, cell_times, cell_resp, labels) in cluster-cell order.

    y, mask: (N, C); x: (N, C, p_eff) with the mmm1 block expansion applied.
    """
    n, tsel = design.n_subjects, len(design.time_labels)
    k = len(formula.responses)
    resp_idx = [ds.response_index(r) for r in formula.responses]
    tpos = ds.time_positions(design.time_labels)
    y = ds.responses[np.ix_(range(n), tpos, resp_idx)]
    cube = design.as_cube()

    if formula.per_response and k == 1:
        x = cube  # (N, T, p)
        y = y[:, :, 0]
        cell_times = np.arange(tsel)
        cell_resp = np.zeros(tsel, dtype=int)
        labels = design.columns
    elif formula.per_response:
        # response-specific coefficients: block-diagonal expansion
        p = cube.shape[-1]
        x = np.zeros((n, tsel, k, k * p))
        for j in range(k):
            x[:, :, j, j * p : (j + 1) * p] = cube
        x = x.reshape(n, tsel * k, k * p)
        y = y.reshape(n, tsel * k)
        cell_times = np.repeat(np.arange(tsel), k)
        cell_resp = np.tile(np.arange(k), tsel)
        labels = tuple(
            f"{r}:{c}" for r in formula.responses for c in design.columns
        )
    else:
        x = cube.reshape(n, tsel * k, -1)
        y = y.reshape(n, tsel * k)
        cell_times = np.repeat(np.arange(tsel), k)
        cell_resp = np.tile(np.arange(k), tsel)
        labels = design.columns
    mask = ~np.isnan(y)
    return np.nan_to_num(y, nan=0.0), mask, x, cell_times, cell_resp, labels


def estimate_working_corr(
    residuals,
    kind: str,
    times=None,
    resp=None,
    n_cells: int | None = None,
    cells=None,
) -> WorkingCorrelation:
    """Moment estimates of working-correlation parameters.

    ``residuals`` is a sequence of per-cluster Pearson residual vectors.
    ``times``/``resp`` give each residual's occasion and response index
    (needed for ``ar1``); ``cells``/``n_cells`` place residuals on the
    cluster cell grid (needed for ``unstructured`` with missing cells).
    """
    res = [np.asarray(r, dtype=float) for r in residuals]
    if len(res) < 2:
        raise EstimationError(f"need at least 2 clusters, got {len(res)}")
    if kind == "independence":
        return WorkingCorrelation("independence")

    # pooled second moment of the residuals normalizes the cross-product
    # averages (Pearson residuals have variance ~ the dispersion)
    total_sq = sum(float((r * r).sum()) for r in res)
    total_n = sum(len(r) for r in res)
    disp = total_sq / total_n if total_n > 0 else 1.0
    disp = max(disp, 1e-12)

    if kind == "exchangeable":
        num = 0.0
        den = 0.0
        for r in res:
            s = r.sum()
            num += 0.5 * (s * s - (r * r).sum())
            den += 0.5 * len(r) * (len(r) - 1)
        rho = num / (den * disp) if den > 0 else 0.0
        return WorkingCorrelation("exchangeable", {"rho": float(np.clip(rho, -0.99, 0.99))})

    if kind == "ar1":
        if times is None:
            raise InvalidArgumentError("ar1 estimation needs per-cell occasion indices")
        multi = resp is not None and any(len(set(rr)) > 1 for rr in resp)
        lag_num = lag_den = 0.0
        cross_num = cross_den = 0.0
        for ci, r in enumerate(res):
            tt = np.asarray(times[ci])
            jj = np.asarray(resp[ci]) if resp is not None else np.zeros(len(r), dtype=int)
            for a in range(len(r)):
                for b in range(a + 1, len(r)):
                    dt = abs(int(tt[a]) - int(tt[b]))
                    if jj[a] == jj[b] and dt == 1:
                        lag_num += r[a] * r[b]
                        lag_den += 1.0
                    elif jj[a] != jj[b] and dt == 0:
                        cross_num += r[a] * r[b]
                        cross_den += 1.0
        rho = lag_num / (lag_den * disp) if lag_den > 0 else 0.0
        params = {"rho": float(np.clip(rho, -0.99, 0.99))}
        if multi:
            rho_b = cross_num / (cross_den * disp) if cross_den > 0 else 0.0
            params["rho_between"] = float(np.clip(rho_b, -0.99, 0.99))
        return WorkingCorrelation("ar1", params)

    if kind == "unstructured":
        if cells is None:
            sizes = {len(r) for r in res}
            if len(sizes) != 1:
                raise InvalidArgumentError(
                    "unstructured estimation with ragged clusters needs cell indices"
                )
            n_cells = sizes.pop()
            cells = [np.arange(n_cells)] * len(res)
        if n_cells is None:
            raise InvalidArgumentError("unstructured estimation needs n_cells")
        acc = np.zeros((n_cells, n_cells))
        cnt = np.zeros((n_cells, n_cells))
        for ci, r in enumerate(res):
            idx = np.asarray(cells[ci], dtype=int)
            acc[np.ix_(idx, idx)] += np.outer(r, r)
            cnt[np.ix_(idx, idx)] += 1.0
        with np.errstate(invalid="ignore"):
            mat = np.where(cnt > 0, acc / np.maximum(cnt, 1.0), 0.0)
        mat = 0.5 * (mat + mat.T)
        d = np.sqrt(np.clip(np.diag(mat), MU_FLOOR, None))
        mat = mat / np.outer(d, d)
        np.fill_diagonal(mat, 1.0)
        mat = _psd_clip(mat, floor=1e-8)
        return WorkingCorrelation("unstructured", {"matrix": mat})

    raise InvalidArgumentError(f"unknown working correlation {kind!r}")


def _psd_clip(mat: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    eigvals, eigvecs = np.linalg.eigh(mat)
    if eigvals.min() >= floor:
        return mat
    fixed = (eigvecs * np.clip(eigvals, floor, None)) @ eigvecs.T
    fixed = 0.5 * (fixed + fixed.T)
    d = np.sqrt(np.diag(fixed))
    fixed = fixed / np.outer(d, d)
    np.fill_diagonal(fixed, 1.0)
    return fixed


def build_correlation(
    corr: WorkingCorrelation, cell_times: np.ndarray, cell_resp: np.ndarray
) -> np.ndarray:
    """Correlation matrix over the cluster cell grid."""
    c = len(cell_times)
    if corr.kind == "independence":
        return np.eye(c)
    if corr.kind == "exchangeable":
        rho = corr.params.get("rho", 0.0)
        rho = max(rho, -1.0 / max(c - 1, 1) + 1e-6)
        return (1.0 - rho) * np.eye(c) + rho * np.ones((c, c))
    if corr.kind == "ar1":
        rho = corr.params.get("rho", 0.0)
        k = len(set(cell_resp.tolist()))
        lag = np.abs(cell_times[:, None] - cell_times[None, :]).astype(float)
        mat = np.power(float(rho), lag) if rho != 0.0 else np.where(lag == 0, 1.0, 0.0)
        if k > 1:
            rho_b = corr.params.get("rho_between", 0.0)
            rho_b = float(np.clip(rho_b, -1.0 / (k - 1) + 1e-6, 1.0 - 1e-6))
            between = np.where(cell_resp[:, None] == cell_resp[None, :], 1.0, rho_b)
            mat = mat * between
        np.fill_diagonal(mat, 1.0)
        return mat
    mat = np.asarray(corr.params["matrix"], dtype=float)
    if mat.shape != (c, c):
        raise ShapeError(
            f"unstructured correlation has shape {mat.shape}, cluster has {c} cells"
        )
    return mat


def _named_singular_columns(m: np.ndarray, labels) -> list:
    _, r = np.linalg.qr(m)
    piv = np.abs(np.diag(r))
    tol = piv.max(initial=0.0) * 1e-10
    return [labels[i] for i in np.flatnonzero(piv <= tol)]


def fit_gee(
    train: LongitudinalDataset,
    formula: ModelFormula,
    corr: str | WorkingCorrelation = "independence",
    kind: str | None = None,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> GeeFit:
    """Fit a marginal logistic model by GEE.

    The coefficient update is Fisher scoring on the estimating equations;
    correlation parameters are re-estimated from Pearson residuals after
    every update.  Convergence is declared when the max absolute
    coefficient update falls below ``tol``.
    """
    if isinstance(corr, str):
        corr = WorkingCorrelation(corr)
    kind = kind or _infer_kind(formula)
    if kind not in ("umm", "mmm1", "mmm2"):
        raise InvalidArgumentError(f"unknown GEE kind {kind!r}")
    if kind == "umm" and (len(formula.responses) != 1 or not formula.per_response):
        raise InvalidArgumentError("umm requires a single-response per-response formula")
    if kind == "mmm1" and not formula.per_response:
        raise InvalidArgumentError("mmm1 requires a per-response formula")
    if kind == "mmm2" and formula.per_response:
        raise InvalidArgumentError("mmm2 requires a shared-coefficient formula")

    design = design_matrix(train, formula)
    y, mask, x, cell_times, cell_resp, labels = _stacked_layout(train, formula, design)
    n, _, p = x.shape

    beta = np.zeros(p)
    working = corr
    trace = []
    n_iter = 0
    update_norm = np.inf
    for n_iter in range(1, max_iter + 1):
        eta = np.einsum("ncp,p->nc", x, beta)
        mu = np.clip(expit(eta), MU_FLOOR, 1.0 - MU_FLOOR)
        avar = mu * (1.0 - mu)
        pearson = np.where(mask, (y - mu) / np.sqrt(avar), 0.0)

        if corr.kind != "independence":
            res_list, t_list, j_list, c_list = [], [], [], []
            for i in range(n):
                mi = mask[i]
                res_list.append(pearson[i, mi])
                t_list.append(cell_times[mi])
                j_list.append(cell_resp[mi])
                c_list.append(np.flatnonzero(mi))
            working = estimate_working_corr(
                res_list,
                corr.kind,
                times=t_list,
                resp=j_list,
                n_cells=len(cell_times),
                cells=c_list,
            )
        r_full = build_correlation(working, cell_times, cell_resp)

        score = np.zeros(p)
        info = np.zeros((p, p))
        meat = np.zeros((p, p))
        complete = mask.all()
        if complete:
            r_inv = np.linalg.inv(_psd_clip(r_full, 1e-8))
            b_mat = np.sqrt(avar)[:, :, None] * x  # (N, C, p)
            rb = np.einsum("cd,ndp->ncp", r_inv, b_mat)
            score = np.einsum("ncp,nc->p", rb, pearson)
            info = np.einsum("ncp,ncq->pq", b_mat, rb)
            g_all = np.einsum("ncp,nc->np", rb, pearson)
            meat = g_all.T @ g_all
        else:
            g_rows = np.zeros((n, p))
            for i in range(n):
                mi = mask[i]
                if not mi.any():
                    continue
                idx = np.flatnonzero(mi)
                r_sub = _psd_clip(r_full[np.ix_(idx, idx)], 1e-8)
                b_i = np.sqrt(avar[i, mi])[:, None] * x[i, mi]
                sol = np.linalg.solve(r_sub, np.column_stack([b_i, pearson[i, mi]]))
                rb_i, rr_i = sol[:, :-1], sol[:, -1]
                g_rows[i] = b_i.T @ rr_i
                score += g_rows[i]
                info += b_i.T @ rb_i
            meat = g_rows.T @ g_rows

        try:
            step = np.linalg.solve(info, score)
        except np.linalg.LinAlgError:
            bad = _named_singular_columns(info, labels)
            raise RankDeficiencyError(
                f"design is rank deficient; non-identifiable columns: {bad}",
                columns=bad,
            ) from None
        beta = beta + step
        update_norm = float(np.abs(step).max())
        trace.append(update_norm)
        if not np.isfinite(update_norm):
            raise ConvergenceError(
                "GEE update diverged (non-finite step)", last_iterate=beta, trace=trace
            )
        if update_norm < tol:
            break
    else:
        raise ConvergenceError(
            f"GEE did not converge in {max_iter} iterations "
            f"(last update {update_norm:.3g})",
            last_iterate=beta,
            trace=trace,
        )

    try:
        bread = np.linalg.inv(info)
    except np.linalg.LinAlgError:
        bad = _named_singular_columns(info, labels)
        raise RankDeficiencyError(
            f"final information matrix singular; columns: {bad}", columns=bad
        ) from None
    sandwich = bread @ meat @ bread
    sandwich = 0.5 * (sandwich + sandwich.T)
    return GeeFit(
        kind=kind,
        formula=formula,
        columns=design.columns,
        coef_labels=tuple(labels),
        coef=beta,
        corr=working,
        naive_cov=bread,
        sandwich_cov=sandwich,
        n_iter=n_iter,
        converged=update_norm < tol,
        final_update=update_norm,
    )


def _probs_from_design(fit: GeeFit, design: DesignMatrix) -> np.ndarray:
    if design.columns != fit.columns:
        raise ShapeError(
            f"design columns {design.columns} do not match fit columns {fit.columns}"
        )
    cube = design.as_cube()
    if fit.kind == "mmm2":
        return expit(np.einsum("ntkp,p->ntk", cube, fit.coef))
    coefs = fit.coef_by_response
    probs = expit(np.einsum("ntp,kp->ntk", cube, coefs))
    if fit.kind == "umm":
        return probs[:, :, 0]
    return probs


def forecast_marginal(fit: GeeFit, xhat_design: DesignMatrix) -> np.ndarray:
    """Success probabilities for new design rows.

    Only the marginal mean is used; the working correlation plays no role.
    Returns (N, T_sel) for umm and (N, T_sel, k) otherwise.
    """
    return _probs_from_design(fit, xhat_design)


def fitted_marginal(fit: GeeFit, ds: LongitudinalDataset, t_range=None) -> np.ndarray:
    """In-sample fitted probabilities on a dataset window."""
    design = design_matrix(ds, fit.formula, t_range)
    return _probs_from_design(fit, design)
