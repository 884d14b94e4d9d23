"""First-order probit-normal marginalized transition random-effects model.

Layered probit model for multivariate binary panels.  At the first
occasion a baseline block links the marginal probability Phi(X b*) to a
conditional layer Phi(D* + lam*_j sigma_1 z).  From the second occasion a
transition block links the marginal Phi(X b) to a lag-1 transition layer
Phi(D + a_t Z y_prev) and on to the conditional layer
Phi(D* + lam_j sigma_t z).  The intercepts D and D* are deterministic:
D solves the two-branch marginal constraint over the lagged response, and
D* has the probit-normal closed form D* = Phi^{-1}(p) sqrt(1 + lam^2
sigma^2).  One standard-normal score z per subject drives every occasion,
so likelihoods are one-dimensional Gauss-Hermite integrals.

The two blocks are estimated in stages (baseline first), each by
quasi-Newton with central finite-difference gradients.  lam_1 = lam*_1 = 1
for identifiability.
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import log_ndtr, logsumexp, ndtr, ndtri

from .dataset import LongitudinalDataset, ModelFormula, design_matrix
from .errors import (
    ConvergenceError,
    DomainError,
    InvalidArgumentError,
    ShapeError,
)
from .numerics import (
    _information_inverse,
    central_gradient,
    central_hessian,
    gauss_hermite,
    solve_increasing,
)

__all__ = [
    "PnmtremBaselineFit",
    "PnmtremFit",
    "PnmtremForecastConfig",
    "NAMED_VARIANTS",
    "solve_transition_intercept",
    "solve_probit_intercept",
    "fit_baseline",
    "fit_transition",
    "fit_pnmtrem",
    "smooth_params",
    "choose_smoothing",
    "forecast_pnmtrem",
    "fitted_probs_pnmtrem",
]

P_FLOOR = 1e-10
DEFAULT_QUAD = 40
Z_SOURCES = ("empirical_bayes", "zero")
HISTORY_MODES = ("cutoff_half", "observed", "empirical_cutoff", "bernoulli_sim")
NAMED_VARIANTS = {
    "PNMTREM1": ("empirical_bayes", "cutoff_half"),
    "PNMTREM2": ("zero", "cutoff_half"),
}

_NORM_CONST = 1.0 / np.sqrt(2.0 * np.pi)


def _npdf(x):
    return _NORM_CONST * np.exp(-0.5 * x * x)


def _two_branch(delta, az, p_prev):
    return ndtr(delta + az) * p_prev + ndtr(delta) * (1.0 - p_prev)


def _solve_transition_batch(p_t, p_prev, az, tol=1e-11, x0=None):
    """Vectorized solve of the two-branch marginal constraint for Delta.

    Residuals are taken on the probit scale, which keeps Newton steps well
    scaled for extreme marginals; ``tol`` is a probit-scale tolerance.
    """
    p_t = np.asarray(p_t, dtype=float)
    p_prev = np.broadcast_to(np.asarray(p_prev, dtype=float), p_t.shape)
    az = np.broadcast_to(np.asarray(az, dtype=float), p_t.shape)
    base = ndtri(p_t)
    # the mixture pins Delta between ndtri(p_t) - max(az,0) and - min(az,0)
    lo = base - np.maximum(az, 0.0) - 1e-9
    hi = base - np.minimum(az, 0.0) + 1e-9

    def value_and_slope(d):
        shifted = d + az
        val = ndtr(shifted) * p_prev + ndtr(d) * (1.0 - p_prev)
        val = np.clip(val, 1e-300, 1.0 - 1e-16)
        slope = _npdf(shifted) * p_prev + _npdf(d) * (1.0 - p_prev)
        probit = ndtri(val)
        return probit, slope / np.maximum(_npdf(probit), 1e-300)

    start = base - az * p_prev if x0 is None else np.clip(x0, lo, hi)
    return solve_increasing(
        None, None, base, start, lo, hi, tol=tol, value_and_slope=value_and_slope
    )


def solve_transition_intercept(p_marg_t: float, p_marg_prev: float, alpha_z: float) -> float:
    """Transition-layer intercept for one cell.

    Solves ``Phi(D + alpha_z) p_prev + Phi(D) (1 - p_prev) = p_t`` for D;
    the left side is strictly increasing in D so Newton with a guaranteed
    bracket always converges.
    """
    for name, p in (("p_marg_t", p_marg_t), ("p_marg_prev", p_marg_prev)):
        if not 0.0 < p < 1.0:
            raise DomainError(f"{name} must be in (0,1), got {p}")
    out = _solve_transition_batch(
        np.array([p_marg_t]), np.array([p_marg_prev]), np.array([alpha_z])
    )
    return float(out[0])


def solve_probit_intercept(p_cond: float, loading: float, sigma: float) -> float:
    """Conditional-layer intercept via the probit-normal closed form.

    ``E[Phi(D* + loading*sigma*Z)] = p_cond`` has the exact solution
    ``D* = Phi^{-1}(p_cond) sqrt(1 + loading^2 sigma^2)``.
    """
    if not 0.0 < p_cond < 1.0:
        raise DomainError(f"p_cond must be in (0,1), got {p_cond}")
    if sigma < 0:
        raise DomainError(f"sigma must be non-negative, got {sigma}")
    return float(ndtri(p_cond) * np.sqrt(1.0 + loading**2 * sigma**2))


def _pooled_probit(x, y, mask, max_iter=100, tol=1e-10, ridge=1e-8):
    """Plain probit regression MLE by Newton scoring (used for starts)."""
    rows = x[mask]
    target = y[mask]
    beta = np.zeros(x.shape[-1])
    for _ in range(max_iter):
        eta = rows @ beta
        p = np.clip(ndtr(eta), P_FLOOR, 1.0 - P_FLOOR)
        d = _npdf(eta)
        w = d * d / (p * (1.0 - p))
        score = rows.T @ ((target - p) * d / (p * (1.0 - p)))
        info = (rows * w[:, None]).T @ rows + ridge * np.eye(len(beta))
        step = np.linalg.solve(info, score)
        beta = beta + step
        if np.abs(step).max() < tol:
            break
    return beta


def _log_bern_probit(eta, y):
    return np.where(y == 1.0, log_ndtr(eta), log_ndtr(-eta))


@dataclass
class PnmtremBaselineFit:
    """First-occasion block: marginal coefficients, response loadings, scale."""

    formula: ModelFormula
    columns: tuple
    coef: np.ndarray        # (p1,)
    loadings: np.ndarray    # (k,), loadings[0] == 1
    sigma: float
    loglik: float
    n_iter: int
    converged: bool
    message: str = ""


@dataclass
class PnmtremFit:
    """Baseline plus transition blocks and per-subject latent scores."""

    baseline: PnmtremBaselineFit
    formula: ModelFormula
    columns: tuple
    z_columns: tuple
    response_names: tuple
    coef: np.ndarray         # (p,)
    lag_coefs: np.ndarray    # (T-1, q): transition effect per occasion t=2..T
    loadings: np.ndarray     # (k,), loadings[0] == 1
    sigmas: np.ndarray       # (T-1,): random-effect scale per occasion t=2..T
    times: np.ndarray        # training occasion labels
    latent_scores: np.ndarray
    loglik: float
    quad_order: int
    n_iter: int
    converged: bool
    message: str = ""

    def to_json(self) -> str:
        b = self.baseline
        return json.dumps(
            {
                "model": "pnmtrem",
                "responses": list(self.formula.responses),
                "terms": list(self.formula.terms),
                "baseline_terms": list(b.formula.terms),
                "z_terms": list(self.z_terms),
                "columns": list(self.columns),
                "baseline": {
                    "coef": b.coef.tolist(),
                    "loadings": b.loadings.tolist(),
                    "sigma": b.sigma,
                    "loglik": b.loglik,
                },
                "coef": self.coef.tolist(),
                "lag_coefs": self.lag_coefs.tolist(),
                "loadings": self.loadings.tolist(),
                "sigmas": self.sigmas.tolist(),
                "times": self.times.tolist(),
                "latent_scores": self.latent_scores.tolist(),
                "loglik": self.loglik,
                "quad_order": self.quad_order,
                "n_iter": self.n_iter,
                "converged": self.converged,
                "message": self.message,
            },
            indent=2,
        )

    @property
    def z_terms(self) -> tuple:
        return tuple(c for c in self.z_columns if c != "intercept")

    @classmethod
    def from_json(cls, text: str) -> "PnmtremFit":
        d = json.loads(text)
        if d.get("model") != "pnmtrem":
            raise InvalidArgumentError("not a PNMTREM fit file")
        responses = tuple(d["responses"])
        bform = ModelFormula(responses, tuple(d["baseline_terms"]), per_response=False)
        baseline = PnmtremBaselineFit(
            formula=bform,
            columns=("intercept",) + tuple(d["baseline_terms"]),
            coef=np.asarray(d["baseline"]["coef"], dtype=float),
            loadings=np.asarray(d["baseline"]["loadings"], dtype=float),
            sigma=float(d["baseline"]["sigma"]),
            loglik=float(d["baseline"]["loglik"]),
            n_iter=0,
            converged=True,
        )
        return cls(
            baseline=baseline,
            formula=ModelFormula(responses, tuple(d["terms"]), per_response=False),
            columns=tuple(d["columns"]),
            z_columns=("intercept",) + tuple(d["z_terms"]),
            response_names=responses,
            coef=np.asarray(d["coef"], dtype=float),
            lag_coefs=np.asarray(d["lag_coefs"], dtype=float),
            loadings=np.asarray(d["loadings"], dtype=float),
            sigmas=np.asarray(d["sigmas"], dtype=float),
            times=np.asarray(d["times"], dtype=float),
            latent_scores=np.asarray(d["latent_scores"], dtype=float),
            loglik=float(d["loglik"]),
            quad_order=int(d["quad_order"]),
            n_iter=int(d["n_iter"]),
            converged=bool(d["converged"]),
            message=d.get("message", ""),
        )


def _baseline_cells(train, formula):
    first = [train.times[0]]
    design = design_matrix(train, formula, t_range=first)
    cube = design.as_cube()[:, 0]  # (N, k, p1)
    resp_idx = [train.response_index(r) for r in formula.responses]
    y = train.responses[:, 0, resp_idx]
    mask = ~np.isnan(y)
    return design, cube, np.nan_to_num(y, nan=0.0), mask


def _baseline_star(cube, coef, loadings, sigma):
    """Baseline conditional intercepts D*_1, shape (N, k)."""
    eta = np.clip(cube @ coef, ndtri(P_FLOOR), -ndtri(P_FLOOR))
    return eta * np.sqrt(1.0 + (loadings * sigma) ** 2)[None, :]


def fit_baseline(
    train: LongitudinalDataset,
    formula: ModelFormula,
    quad_order: int = DEFAULT_QUAD,
    max_iter: int = 200,
    fix_sigma: float | None = None,
    fix_loadings: bool = False,
) -> PnmtremBaselineFit:
    """MLE of the first-occasion block on the training data's first occasion.

    Optimizes (coef, loadings[1:], log sigma); ``fix_sigma``/``fix_loadings``
    pin the random-effect scale or the response loadings (handy for
    degenerate-limit checks).
    """
    if formula.per_response:
        raise InvalidArgumentError("baseline block uses a shared-coefficient formula")
    design, cube, y, mask = _baseline_cells(train, formula)
    if not mask.any():
        raise InvalidArgumentError("no observed first-occasion responses")
    n, k, p1 = cube.shape
    rule = gauss_hermite(quad_order)
    z = rule.std_normal_nodes
    logw = np.log(rule.std_normal_weights)

    free_sigma = fix_sigma is None
    free_lam = (not fix_loadings) and k > 1

    def unpack(theta):
        coef = theta[:p1]
        pos = p1
        lam = np.ones(k)
        if free_lam:
            lam[1:] = theta[pos : pos + k - 1]
            pos += k - 1
        sigma = np.exp(theta[pos]) if free_sigma else float(fix_sigma)
        return coef, lam, sigma

    def nll(theta):
        coef, lam, sigma = unpack(theta)
        star = _baseline_star(cube, coef, lam, sigma)
        eta = star[:, :, None] + (lam * sigma)[None, :, None] * z
        ll = _log_bern_probit(eta, y[:, :, None])
        ll = np.where(mask[:, :, None], ll, 0.0).sum(axis=1)  # (N, Q)
        return -float(logsumexp(ll + logw, axis=1).sum())

    start = [_pooled_probit(cube.reshape(-1, p1), y.ravel(), mask.ravel())]
    if free_lam:
        start.append(np.ones(k - 1))
    if free_sigma:
        start.append([np.log(0.5)])
    theta0 = np.concatenate([np.atleast_1d(np.asarray(s, dtype=float)) for s in start])

    bounds = [(None, None)] * p1
    if free_lam:
        bounds += [(-20.0, 20.0)] * (k - 1)
    if free_sigma:
        bounds.append((-7.0, 4.0))
    res = minimize(
        nll,
        theta0,
        jac=lambda th: central_gradient(nll, th),
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "ftol": 1e-9, "gtol": 1e-4},
    )
    if not np.isfinite(res.fun):
        raise ConvergenceError("baseline block diverged", last_iterate=res.x)
    coef, lam, sigma = unpack(res.x)
    return PnmtremBaselineFit(
        formula=formula,
        columns=design.columns,
        coef=coef,
        loadings=lam,
        sigma=float(sigma),
        loglik=-float(res.fun),
        n_iter=int(res.nit),
        converged=bool(res.success or float(np.abs(res.jac).max()) < 1e-3),
        message=str(res.message),
    )


def _transition_layout(train, formula, z_terms):
    design = design_matrix(train, formula)
    cube = design.as_cube()  # (N, T, k, p)
    z_formula = ModelFormula(formula.responses, tuple(z_terms), per_response=False)
    z_design = design_matrix(train, z_formula)
    z_cube = z_design.as_cube()  # (N, T, k, q)
    resp_idx = [train.response_index(r) for r in formula.responses]
    y = train.responses[:, :, resp_idx]
    return design, cube, z_design, z_cube, np.nan_to_num(y, nan=0.0), ~np.isnan(y)


def _marginal_probit(cube, coef):
    return np.clip(ndtr(np.einsum("...p,p->...", cube, coef)), P_FLOOR, 1 - P_FLOOR)


def fit_transition(
    train: LongitudinalDataset,
    formula: ModelFormula,
    baseline: PnmtremBaselineFit,
    z_terms: tuple = (),
    quad_order: int = DEFAULT_QUAD,
    max_iter: int = 300,
    fix_sigmas: float | None = None,
    fix_lag_coefs: float | None = None,
    fix_loadings: bool = False,
) -> PnmtremFit:
    """MLE of the transition block given a fitted baseline block.

    Covers occasions 2..T.  A cell enters the likelihood when both its
    response and its lag-1 response are observed.  Latent scores are the
    posterior means given both blocks, computed afterwards by quadrature.
    """
    if formula.per_response:
        raise InvalidArgumentError("transition block uses a shared-coefficient formula")
    design, cube, z_design, z_cube, y, mask = _transition_layout(train, formula, z_terms)
    n, t_count, k, p = cube.shape
    if t_count < 2:
        raise InvalidArgumentError("transition block needs at least 2 occasions")
    q = z_cube.shape[-1]
    n_trans = t_count - 1
    rule = gauss_hermite(quad_order)
    z = rule.std_normal_nodes
    logw = np.log(rule.std_normal_weights)

    _, bl_cube, _, _ = _baseline_cells(train, baseline.formula)
    p_base = np.clip(ndtr(bl_cube @ baseline.coef), P_FLOOR, 1 - P_FLOOR)  # (N, k)

    y_cur = y[:, 1:]            # (N, T-1, k)
    y_lag = y[:, :-1]
    mask_cell = mask[:, 1:] & mask[:, :-1]
    x_cur = cube[:, 1:]
    z_cur = z_cube[:, 1:]

    free_sigma = fix_sigmas is None
    free_alpha = fix_lag_coefs is None
    free_lam = (not fix_loadings) and k > 1

    def unpack_batch(thetas):
        b = thetas.shape[0]
        coef = thetas[:, :p]
        pos = p
        if free_alpha:
            alpha = thetas[:, pos : pos + n_trans * q].reshape(b, n_trans, q)
            pos += n_trans * q
        else:
            alpha = np.full((b, n_trans, q), float(fix_lag_coefs))
        lam = np.ones((b, k))
        if free_lam:
            lam[:, 1:] = thetas[:, pos : pos + k - 1]
            pos += k - 1
        if free_sigma:
            sig = np.exp(thetas[:, pos : pos + n_trans])
        else:
            sig = np.full((b, n_trans), float(fix_sigmas))
        return coef, alpha, lam, sig

    def unpack(theta):
        coef, alpha, lam, sig = unpack_batch(theta[None])
        return coef[0], alpha[0], lam[0], sig[0]

    delta_cache: dict = {}
    sign = np.where(mask_cell, 2.0 * y_cur - 1.0, 0.0)

    def nll_batch(thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        b = thetas.shape[0]
        coef, alpha, lam, sig = unpack_batch(thetas)
        p_t = np.clip(
            ndtr(np.einsum("ntkp,bp->bntk", x_cur, coef)), P_FLOOR, 1 - P_FLOOR
        )
        p_prev = np.empty_like(p_t)
        p_prev[:, :, 0] = p_base[None]
        if n_trans > 1:
            p_prev[:, :, 1:] = np.clip(
                ndtr(np.einsum("ntkp,bp->bntk", cube[:, 1:-1], coef)),
                P_FLOOR,
                1 - P_FLOOR,
            )
        az = np.einsum("ntkq,btq->bntk", z_cur, alpha)
        delta = _solve_transition_batch(p_t, p_prev, az, x0=delta_cache.get(b))
        delta_cache[b] = delta
        lamsig = lam[:, None, :] * sig[:, :, None]  # (B, T-1, k)
        scale = np.sqrt(1.0 + lamsig**2)
        star = (delta + az * y_lag[None]) * scale[:, None]
        eta = star[..., None] + lamsig[:, None, :, :, None] * z
        ll = log_ndtr(sign[None, ..., None] * eta)
        ll = np.where(mask_cell[None, ..., None], ll, 0.0).sum(axis=(2, 3))
        return -logsumexp(ll + logw, axis=2).sum(axis=1)

    def nll(theta):
        return float(nll_batch(theta[None])[0])

    def grad(theta):
        d = len(theta)
        steps = 1e-5 * np.maximum(1.0, np.abs(theta))
        pts = np.repeat(theta[None], 2 * d, axis=0)
        rows = np.arange(d)
        pts[2 * rows, rows] += steps
        pts[2 * rows + 1, rows] -= steps
        vals = nll_batch(pts)
        return (vals[0::2] - vals[1::2]) / (2.0 * steps)

    start = [
        _pooled_probit(
            x_cur.reshape(-1, p), y_cur.ravel(), mask_cell.ravel()
        )
    ]
    if free_alpha:
        start.append(np.zeros(n_trans * q))
    if free_lam:
        start.append(np.ones(k - 1))
    if free_sigma:
        start.append(np.full(n_trans, np.log(0.5)))
    theta0 = np.concatenate([np.atleast_1d(np.asarray(s, dtype=float)) for s in start])

    bounds = [(None, None)] * p
    if free_alpha:
        bounds += [(None, None)] * (n_trans * q)
    if free_lam:
        bounds += [(-20.0, 20.0)] * (k - 1)
    if free_sigma:
        bounds += [(-7.0, 4.0)] * n_trans
    t0 = time.perf_counter()
    res = minimize(
        nll,
        theta0,
        jac=grad,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "ftol": 1e-9, "gtol": 1e-4},
    )
    elapsed = time.perf_counter() - t0
    if not np.isfinite(res.fun):
        raise ConvergenceError("transition block diverged", last_iterate=res.x)
    coef, alpha, lam, sig = unpack(res.x)
    grad_norm = float(np.abs(res.jac).max()) if res.jac is not None else np.nan
    message = f"{res.message} (grad {grad_norm:.2e}, {elapsed:.1f}s)"
    if np.any(sig < 1e-6):
        message += "; sigma at lower bound"

    fit = PnmtremFit(
        baseline=baseline,
        formula=formula,
        columns=design.columns,
        z_columns=z_design.columns,
        response_names=formula.responses,
        coef=coef,
        lag_coefs=alpha,
        loadings=lam,
        sigmas=sig,
        times=train.times.copy(),
        latent_scores=np.zeros(n),
        loglik=-float(res.fun),
        quad_order=quad_order,
        n_iter=int(res.nit),
        converged=bool(res.success or grad_norm < 1e-3),
        message=message,
    )
    fit.latent_scores = _posterior_scores(fit, train)
    return fit


def _joint_cell_loglik_at(fit: PnmtremFit, train: LongitudinalDataset, z: np.ndarray):
    """Log-likelihood summed over all cells per (subject, z value)."""
    b = fit.baseline
    _, bl_cube, y1, mask1 = _baseline_cells(train, b.formula)
    star1 = _baseline_star(bl_cube, b.coef, b.loadings, b.sigma)
    eta1 = star1[:, :, None] + (b.loadings * b.sigma)[None, :, None] * z
    ll = np.where(
        mask1[:, :, None], _log_bern_probit(eta1, y1[:, :, None]), 0.0
    ).sum(axis=1)

    star, y, mask_cell = _insample_star(fit, train)
    lamsig = fit.loadings[None, :] * fit.sigmas[:, None]  # (T-1, k)
    eta = star[..., None] + lamsig[None, :, :, None] * z
    ll_t = _log_bern_probit(eta, y[:, 1:, :, None])
    ll += np.where(mask_cell[..., None], ll_t, 0.0).sum(axis=(1, 2))
    return ll  # (N, Q)


def _insample_star(fit: PnmtremFit, train: LongitudinalDataset):
    """Conditional intercepts D* for occasions 2..T given observed history.

    Returns (star, y, mask_cell); a cell is usable when both its response
    and its lag-1 response are observed.
    """
    b = fit.baseline
    _, cube, _, z_cube, y, mask = _transition_layout(train, fit.formula, fit.z_terms)
    _, bl_cube, _, _ = _baseline_cells(train, b.formula)
    p_base = np.clip(ndtr(bl_cube @ b.coef), P_FLOOR, 1 - P_FLOOR)
    p_t = _marginal_probit(cube[:, 1:], fit.coef)
    p_prev = np.empty_like(p_t)
    p_prev[:, 0] = p_base
    if p_t.shape[1] > 1:
        p_prev[:, 1:] = _marginal_probit(cube[:, 1:-1], fit.coef)
    az = np.einsum("ntkq,tq->ntk", z_cube[:, 1:], fit.lag_coefs)
    delta = _solve_transition_batch(p_t, p_prev, az)
    scale = np.sqrt(1.0 + (fit.loadings[None, :] * fit.sigmas[:, None]) ** 2)
    star = (delta + az * y[:, :-1]) * scale[None]
    return star, y, mask[:, 1:] & mask[:, :-1]


def _posterior_scores(fit: PnmtremFit, train: LongitudinalDataset) -> np.ndarray:
    rule = gauss_hermite(fit.quad_order)
    z = rule.std_normal_nodes
    logw = np.log(rule.std_normal_weights)
    ll = _joint_cell_loglik_at(fit, train, z)
    post = ll + logw
    post -= logsumexp(post, axis=1, keepdims=True)
    return np.exp(post) @ z


def fit_pnmtrem(
    train: LongitudinalDataset,
    formula: ModelFormula,
    baseline_formula: ModelFormula | None = None,
    z_terms: tuple = (),
    quad_order: int = DEFAULT_QUAD,
    **kwargs,
) -> PnmtremFit:
    """Fit both blocks in stages: baseline first, then transition."""
    baseline = fit_baseline(
        train, baseline_formula or formula, quad_order=quad_order
    )
    return fit_transition(
        train, formula, baseline, z_terms=z_terms, quad_order=quad_order, **kwargs
    )


def standard_errors_pnmtrem(fit: PnmtremFit, train: LongitudinalDataset) -> dict:
    """Observed-information SEs for the transition block parameters."""
    design, cube, z_design, z_cube, y, mask = _transition_layout(
        train, fit.formula, fit.z_terms
    )
    n, t_count, k, p = cube.shape
    q = z_cube.shape[-1]
    n_trans = t_count - 1
    rule = gauss_hermite(fit.quad_order)
    z = rule.std_normal_nodes
    logw = np.log(rule.std_normal_weights)
    b = fit.baseline
    _, bl_cube, _, _ = _baseline_cells(train, b.formula)
    p_base = np.clip(ndtr(bl_cube @ b.coef), P_FLOOR, 1 - P_FLOOR)
    y_cur, y_lag = y[:, 1:], y[:, :-1]
    mask_cell = mask[:, 1:] & mask[:, :-1]
    x_cur, z_cur = cube[:, 1:], z_cube[:, 1:]

    def nll(theta):
        coef = theta[:p]
        alpha = theta[p : p + n_trans * q].reshape(n_trans, q)
        pos = p + n_trans * q
        lam = np.ones(k)
        if k > 1:
            lam[1:] = theta[pos : pos + k - 1]
            pos += k - 1
        sig = np.exp(theta[pos : pos + n_trans])
        p_t = _marginal_probit(x_cur, coef)
        p_prev = np.empty_like(p_t)
        p_prev[:, 0] = p_base
        if n_trans > 1:
            p_prev[:, 1:] = _marginal_probit(cube[:, 1:-1], coef)
        az = np.einsum("ntkq,tq->ntk", z_cur, alpha)
        delta = _solve_transition_batch(p_t, p_prev, az)
        scale = np.sqrt(1.0 + (lam[None, :] * sig[:, None]) ** 2)
        star = (delta + az * y_lag) * scale[None]
        eta = star[..., None] + (lam[None, :] * sig[:, None])[None, :, :, None] * z
        ll = _log_bern_probit(eta, y_cur[..., None])
        ll = np.where(mask_cell[..., None], ll, 0.0).sum(axis=(1, 2))
        return -float(logsumexp(ll + logw, axis=1).sum())

    theta = np.concatenate(
        [fit.coef, fit.lag_coefs.ravel(), fit.loadings[1:], np.log(fit.sigmas)]
    )
    hess = central_hessian(nll, theta)
    cov = _information_inverse(hess)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return {
        "coef": se[:p],
        "lag_coefs": se[p : p + n_trans * q].reshape(n_trans, q),
        "packed": se,
    }


def standard_errors_baseline(fit: PnmtremBaselineFit, train: LongitudinalDataset) -> dict:
    """Observed-information SEs for the baseline block (coef, loadings, log sigma)."""
    _, cube, y, mask = _baseline_cells(train, fit.formula)
    n, k, p1 = cube.shape
    rule = gauss_hermite(DEFAULT_QUAD)
    z = rule.std_normal_nodes
    logw = np.log(rule.std_normal_weights)

    def nll(theta):
        coef = theta[:p1]
        lam = np.ones(k)
        pos = p1
        if k > 1:
            lam[1:] = theta[pos : pos + k - 1]
            pos += k - 1
        sigma = np.exp(theta[pos])
        star = _baseline_star(cube, coef, lam, sigma)
        eta = star[:, :, None] + (lam * sigma)[None, :, None] * z
        ll = _log_bern_probit(eta, y[:, :, None])
        ll = np.where(mask[:, :, None], ll, 0.0).sum(axis=1)
        return -float(logsumexp(ll + logw, axis=1).sum())

    theta = np.concatenate([fit.coef, fit.loadings[1:], [np.log(fit.sigma)]])
    hess = central_hessian(nll, theta)
    cov = _information_inverse(hess)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return {"coef": se[:p1], "loadings": se[p1 : p1 + k - 1], "log_sigma": se[-1]}


def choose_smoothing(n_train_times: int, ets_threshold: int = 8) -> str:
    """Series-length policy: exponential smoothing with long training
    windows, simple moving average with short ones."""
    return "ets" if n_train_times >= ets_threshold else "sma"


def _ses_sse(series, alpha):
    level = series[0]
    sse = 0.0
    for val in series[1:]:
        err = val - level
        sse += err * err
        level += alpha * err
    return sse, level


def _holt_sse(series, alpha, beta):
    level, trend = series[0], series[1] - series[0]
    sse = 0.0
    for val in series[1:]:
        pred = level + trend
        err = val - pred
        sse += err * err
        level = pred + alpha * err
        trend = trend + beta * err
    return sse, level, trend


def smooth_params(series, method: str, horizon: int, floor: float | None = None):
    """Forecast a fitted parameter series over the horizon.

    ``ets_ann`` is simple exponential smoothing (additive error, no trend,
    no seasonality), ``ets_aan`` adds an additive trend, ``sma`` forecasts
    the series mean.  Smoothing weights are chosen on a 0.01..0.99 grid
    (step 0.02) by minimizing in-sample one-step squared errors.
    """
    series = np.asarray(series, dtype=float).ravel()
    if horizon < 1:
        raise InvalidArgumentError("horizon must be >= 1")
    if method == "sma":
        if len(series) < 1:
            raise InvalidArgumentError("sma needs at least one value")
        out = np.full(horizon, series.mean())
    elif method == "ets_ann":
        if len(series) < 2:
            raise InvalidArgumentError("ets_ann needs at least 2 values")
        grid = np.arange(0.01, 1.0, 0.02)
        best = min((_ses_sse(series, a) for a in grid), key=lambda r: r[0])
        out = np.full(horizon, best[1])
    elif method == "ets_aan":
        if len(series) < 2:
            raise InvalidArgumentError("ets_aan needs at least 2 values")
        grid = np.arange(0.01, 1.0, 0.02)
        best = None
        for a in grid:
            for b in grid:
                sse, level, trend = _holt_sse(series, a, b)
                if best is None or sse < best[0]:
                    best = (sse, level, trend)
        out = best[1] + best[2] * np.arange(1, horizon + 1)
    else:
        raise InvalidArgumentError(f"unknown smoothing method {method!r}")
    if floor is not None:
        out = np.maximum(out, floor)
    return out


@dataclass(frozen=True)
class PnmtremForecastConfig:
    """Forecast methodology: latent-score source x lagged-response handling.

    ``z_source`` is ``empirical_bayes`` or ``zero``; ``history_mode`` is one
    of ``cutoff_half``, ``observed``, ``empirical_cutoff``,
    ``bernoulli_sim`` (eight combinations).  The named methodologies are
    PNMTREM1 = (empirical_bayes, cutoff_half) and PNMTREM2 =
    (zero, cutoff_half).
    """

    z_source: str = "empirical_bayes"
    history_mode: str = "cutoff_half"
    smoothing: str = "auto"
    ets_threshold: int = 8
    seed: int = 0
    cutoffs: tuple | None = None

    def __post_init__(self):
        if self.z_source not in Z_SOURCES:
            raise InvalidArgumentError(f"z_source must be one of {Z_SOURCES}")
        if self.history_mode not in HISTORY_MODES:
            raise InvalidArgumentError(f"history_mode must be one of {HISTORY_MODES}")
        if self.smoothing not in ("auto", "ets", "sma"):
            raise InvalidArgumentError("smoothing must be auto, ets, or sma")

    @classmethod
    def named(cls, name: str, **kwargs) -> "PnmtremForecastConfig":
        if name not in NAMED_VARIANTS:
            raise InvalidArgumentError(
                f"unknown methodology {name!r}; named ones: {sorted(NAMED_VARIANTS)}"
            )
        z_source, history = NAMED_VARIANTS[name]
        return cls(z_source=z_source, history_mode=history, **kwargs)


def forecast_pnmtrem(
    fit: PnmtremFit,
    train: LongitudinalDataset,
    xhat: LongitudinalDataset,
    config: PnmtremForecastConfig,
    holdout_y: np.ndarray | None = None,
):
    """Forecast success probabilities and the pseudo-history path.

    ``xhat`` is a dataset over the forecast occasions whose covariates hold
    known or forecast values (its responses are ignored).  Lag-effect and
    scale parameters are extrapolated over the horizon by the configured
    smoothing; the first step conditions on the last observed responses,
    later steps on pseudo-history produced per ``history_mode``.  Returns
    ``(probs, history)`` with shapes (N, horizon, k).
    """
    smoothing = config.smoothing
    if smoothing == "auto":
        smoothing = choose_smoothing(fit.times.size, config.ets_threshold)
    horizon = xhat.n_times
    n = xhat.n_subjects
    k = len(fit.response_names)
    if config.history_mode == "observed" and holdout_y is None:
        raise InvalidArgumentError("history_mode='observed' needs holdout responses")

    if smoothing == "ets":
        alpha_hat = np.column_stack(
            [smooth_params(col, "ets_ann", horizon) for col in fit.lag_coefs.T]
        )
        sig_hat = smooth_params(fit.sigmas, "ets_aan", horizon, floor=1e-6)
    else:
        alpha_hat = np.column_stack(
            [smooth_params(col, "sma", horizon) for col in fit.lag_coefs.T]
        )
        sig_hat = smooth_params(fit.sigmas, "sma", horizon, floor=1e-6)

    design = design_matrix(xhat, fit.formula)
    if design.columns != fit.columns:
        raise ShapeError("forecast design columns do not match the fit")
    cube = design.as_cube()  # (N, m, k, p)
    z_formula = ModelFormula(fit.formula.responses, fit.z_terms, per_response=False)
    z_cube = design_matrix(xhat, z_formula).as_cube()

    # last training occasion: marginal + observed responses seed the recursion
    last = [train.times[-1]]
    last_cube = design_matrix(train, fit.formula, t_range=last).as_cube()[:, 0]
    p_prev = _marginal_probit(last_cube, fit.coef)  # (N, k)
    resp_idx = [train.response_index(r) for r in fit.response_names]
    y_last = train.responses[:, -1, resp_idx]

    if config.cutoffs is not None:
        cutoffs = np.asarray(config.cutoffs, dtype=float)
    elif config.history_mode == "empirical_cutoff":
        cutoffs = np.nanmean(train.responses[:, :, resp_idx], axis=(0, 1))
    else:
        cutoffs = np.full(k, 0.5)

    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    zvec = fit.latent_scores if config.z_source == "empirical_bayes" else np.zeros(n)

    probs = np.empty((n, horizon, k))
    history = np.empty((n, horizon, k))
    y_prev = np.where(np.isnan(y_last), (p_prev >= cutoffs).astype(float), y_last)
    for h in range(horizon):
        p_t = _marginal_probit(cube[:, h], fit.coef)  # (N, k)
        az = z_cube[:, h] @ alpha_hat[h]              # (N, k)
        delta = _solve_transition_batch(p_t, p_prev, az)
        lamsig = fit.loadings * sig_hat[h]            # (k,)
        star = (delta + az * y_prev) * np.sqrt(1.0 + lamsig**2)[None, :]
        probs[:, h] = ndtr(star + lamsig[None, :] * zvec[:, None])

        if config.history_mode == "observed":
            history[:, h] = holdout_y[:, h]
        elif config.history_mode == "bernoulli_sim":
            history[:, h] = (rng.random((n, k)) < probs[:, h]).astype(float)
        else:
            history[:, h] = (probs[:, h] >= cutoffs[None, :]).astype(float)
        p_prev = p_t
        y_prev = history[:, h]
    return probs, history


def fitted_probs_pnmtrem(
    fit: PnmtremFit, train: LongitudinalDataset, z_source: str = "empirical_bayes"
) -> np.ndarray:
    """In-sample fitted probabilities, shape (N, T, k).

    The first occasion comes from the baseline block; later occasions use
    the transition block conditioned on the observed lag-1 responses.
    Cells whose lag is missing come out NaN.
    """
    if z_source not in Z_SOURCES:
        raise InvalidArgumentError(f"z_source must be one of {Z_SOURCES}")
    n = train.n_subjects
    zvec = fit.latent_scores if z_source == "empirical_bayes" else np.zeros(n)
    b = fit.baseline
    _, bl_cube, _, _ = _baseline_cells(train, b.formula)
    star1 = _baseline_star(bl_cube, b.coef, b.loadings, b.sigma)
    out = np.empty((n, train.n_times, len(fit.response_names)))
    out[:, 0] = ndtr(star1 + (b.loadings * b.sigma)[None, :] * zvec[:, None])

    star, y, mask_cell = _insample_star(fit, train)
    lamsig = fit.loadings[None, :] * fit.sigmas[:, None]  # (T-1, k)
    vals = ndtr(star + lamsig[None] * zvec[:, None, None])
    out[:, 1:] = np.where(mask_cell, vals, np.nan)
    return out
