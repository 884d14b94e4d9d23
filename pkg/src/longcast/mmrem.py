"""Marginalized multivariate random-effects model.

Two-level logistic model: the marginal layer is ``logit P(Y_itj=1) =
X_it b_j`` and the conditional layer adds a subject random effect,
``logit P(Y_itj=1 | z_i) = Delta_itj + a_tj z_i`` with ``z_i ~ N(0,1)``.
The intercept Delta is not free: it solves the convolution equation that
forces the conditional layer to reproduce the marginal probability after
integrating the random effect out.

The random-effect loadings ``a_tj`` come from the row sums of the
Kronecker square root of an AR-1(time) x covariance(response) latent
structure, so a single scalar latent score per subject drives all cells.
The likelihood is therefore a one-dimensional integral, evaluated by
Gauss-Hermite quadrature, and is maximized by quasi-Newton with central
finite-difference gradients over (coefficients, atanh of the AR
parameter, log-Cholesky of the response covariance).
"""
from __future__ import annotations

import json
import time
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import expit, log_expit, logit, logsumexp

from .dataset import DesignMatrix, LongitudinalDataset, ModelFormula, design_matrix
from .errors import (
    ConvergenceError,
    DomainError,
    InvalidArgumentError,
    ShapeError,
)
from .gee import fit_gee
from .numerics import (
    QuadratureRule,
    _information_inverse,
    ar1_matrix,
    central_hessian,
    gauss_hermite,
    solve_increasing,
    sym_sqrt,
)

__all__ = [
    "MmremFit",
    "MmremForecastConfig",
    "solve_conditional_intercept",
    "latent_loading",
    "fit_mmrem",
    "posterior_latent_score",
    "forecast_mmrem",
    "fitted_probs_mmrem",
    "select_k_draws",
    "standard_errors_mmrem",
]

VARIANTS = ("MMREM1", "MMREM2", "MMREM3", "MMREM4")
P_FLOOR = 1e-10
DEFAULT_QUAD = 40
GAMMA_CAP = 0.999999  # tanh saturates at +-1, outside ar1_matrix's domain


def _mixture_prob(delta, sd, rule: QuadratureRule):
    """E[expit(delta + sd * Z)] for Z ~ N(0,1), broadcast over trailing node axis."""
    z = rule.std_normal_nodes
    w = rule.std_normal_weights
    return expit(delta[..., None] + sd[..., None] * z) @ w


def _solve_intercept_batch(p_marg, sd, rule, tol=1e-11, x0=None):
    """Vectorized solve of E[expit(Delta + sd Z)] = p_marg for Delta.

    The residual is taken on the logit scale, where the equation has
    slope of order one everywhere (on the probability scale the slope
    underflows for extreme marginals and Newton degrades to bisection).
    ``tol`` is therefore a logit-scale tolerance.
    """
    p_marg = np.asarray(p_marg, dtype=float)
    sd = np.broadcast_to(np.asarray(sd, dtype=float), p_marg.shape)
    base = logit(p_marg)
    if np.all(sd == 0.0):
        return base.copy()
    # logistic-normal approximation: root ~ base * sqrt(1 + 0.346 sd^2);
    # the margin covers that shift with a ~20% cushion plus a constant
    approx = base * np.sqrt(1.0 + 0.346 * sd * sd)
    margin = 4.0 + 2.0 * sd + 0.3 * np.abs(approx - base)
    lo = approx - margin
    hi = approx + margin
    z = rule.std_normal_nodes
    w = rule.std_normal_weights

    def value_and_slope(d):
        p = expit(d[..., None] + sd[..., None] * z)
        mix = np.clip(p @ w, 1e-300, 1.0 - 1e-16)
        dmix = (p * (1.0 - p)) @ w
        return logit(mix), dmix / (mix * (1.0 - mix))

    if x0 is None:
        # verify/expand the bracket on cold solves (warm restarts inherit one)
        for _ in range(60):
            width = hi - lo
            too_high = value_and_slope(lo)[0] > base
            too_low = value_and_slope(hi)[0] < base
            if not (too_high.any() or too_low.any()):
                break
            lo = np.where(too_high, lo - width, lo)
            hi = np.where(too_low, hi + width, hi)
    start = approx if x0 is None else np.clip(x0, lo, hi)
    return solve_increasing(
        None, None, base, start, lo, hi, tol=tol, value_and_slope=value_and_slope
    )


def solve_conditional_intercept(
    marginal_p: float, re_variance: float, quad_order: int = DEFAULT_QUAD
) -> float:
    """Conditional-scale intercept reproducing a marginal probability.

    Solves ``E[expit(Delta + b)] = marginal_p`` for ``Delta`` where
    ``b ~ N(0, re_variance)``.  With zero variance this is just
    ``logit(marginal_p)``; the solve involves only the random effect's own
    variance, not its correlation across cells.
    """
    if not 0.0 < marginal_p < 1.0:
        raise DomainError(f"marginal probability must be in (0,1), got {marginal_p}")
    if re_variance < 0:
        raise DomainError(f"variance must be non-negative, got {re_variance}")
    if re_variance == 0.0:
        return float(logit(marginal_p))
    rule = gauss_hermite(quad_order)
    out = _solve_intercept_batch(
        np.array([marginal_p]), np.array([np.sqrt(re_variance)]), rule, tol=1e-12
    )
    return float(out[0])


def latent_loading(
    time_sqrt: np.ndarray,
    resp_sqrt: np.ndarray,
    t: int,
    j: int,
    variant: str = "MMREM1",
    n_train_times: int | None = None,
) -> float:
    """Loading of cell (t, j) on the scalar latent score.

    Row ``k*(t-1)+j`` of ``kron(time_sqrt, resp_sqrt)`` is summed over the
    retained columns: all columns for MMREM1 (and the in-sample case),
    only the forecast-window time blocks for MMREM2.  ``t`` and ``j`` are
    1-based.
    """
    time_sqrt = np.asarray(time_sqrt, dtype=float)
    resp_sqrt = np.asarray(resp_sqrt, dtype=float)
    d1, k = time_sqrt.shape[0], resp_sqrt.shape[0]
    if not (1 <= t <= d1 and 1 <= j <= k):
        raise InvalidArgumentError(
            f"cell (t={t}, j={j}) outside the {d1} x {k} grid"
        )
    if variant in ("MMREM1", "MMREM3", "MMREM4"):
        time_part = time_sqrt[t - 1].sum()
    elif variant == "MMREM2":
        if n_train_times is None:
            raise InvalidArgumentError("MMREM2 loading needs n_train_times")
        if not 0 <= n_train_times <= d1:
            raise InvalidArgumentError(
                f"n_train_times={n_train_times} outside extended dim {d1}"
            )
        time_part = time_sqrt[t - 1, n_train_times:].sum()
    else:
        raise InvalidArgumentError(f"unknown variant {variant!r}")
    return float(time_part * resp_sqrt[j - 1].sum())


def _loading_grid(gamma: float, resp_cov: np.ndarray, n_times: int) -> np.ndarray:
    """In-sample loadings a_tj, shape (T, k): full row sums of the Kronecker root."""
    s1 = sym_sqrt(ar1_matrix(gamma, n_times))
    s2 = sym_sqrt(resp_cov)
    return np.outer(s1.sum(axis=1), s2.sum(axis=1))


def _pack(beta, gamma, resp_cov, fix_ar_corr=None):
    k = resp_cov.shape[0]
    chol = np.linalg.cholesky(resp_cov)
    tril = []
    for i in range(k):
        for j in range(i + 1):
            tril.append(np.log(chol[i, i]) if i == j else chol[i, j])
    ar_part = [] if fix_ar_corr is not None else [np.arctanh(gamma)]
    return np.concatenate([np.ravel(beta), ar_part, tril])


def _unpack(theta, k, p, fix_ar_corr=None):
    beta = theta[: k * p].reshape(k, p)
    pos = k * p
    if fix_ar_corr is not None:
        gamma = float(fix_ar_corr)
    else:
        gamma = float(np.clip(np.tanh(theta[pos]), -GAMMA_CAP, GAMMA_CAP))
        pos += 1
    chol = np.zeros((k, k))
    for i in range(k):
        for j in range(i + 1):
            chol[i, j] = np.exp(theta[pos]) if i == j else theta[pos]
            pos += 1
    return beta, gamma, chol @ chol.T


@dataclass
class MmremFit:
    """Fitted parameters, per-subject latent scores, and fit metadata."""

    formula: ModelFormula
    columns: tuple
    response_names: tuple
    coef: np.ndarray          # (k, p) response-specific coefficients
    ar_corr: float            # AR-1 parameter of the time correlation
    resp_cov: np.ndarray      # (k, k) response covariance of the random effects
    latent_scores: np.ndarray  # (N,) posterior means of z_i
    loglik: float
    n_train_times: int
    quad_order: int
    n_iter: int
    converged: bool
    message: str = ""

    @property
    def n_responses(self) -> int:
        return len(self.response_names)

    def to_json(self) -> str:
        k = self.resp_cov.shape[0]
        tril = [float(self.resp_cov[i, j]) for i in range(k) for j in range(i + 1)]
        return json.dumps(
            {
                "model": "mmrem",
                "responses": list(self.formula.responses),
                "terms": list(self.formula.terms),
                "columns": list(self.columns),
                "coef": self.coef.tolist(),
                "ar_corr": float(self.ar_corr),
                "resp_cov_tril": tril,
                "latent_scores": [float(z) for z in self.latent_scores],
                "loglik": float(self.loglik),
                "n_train_times": self.n_train_times,
                "quad_order": self.quad_order,
                "n_iter": self.n_iter,
                "converged": self.converged,
                "message": self.message,
            },
            indent=2,
        )

    @classmethod
    def from_json(cls, text: str) -> "MmremFit":
        d = json.loads(text)
        if d.get("model") != "mmrem":
            raise InvalidArgumentError("not an MMREM fit file")
        responses = tuple(d["responses"])
        k = len(responses)
        cov = np.zeros((k, k))
        pos = 0
        for i in range(k):
            for j in range(i + 1):
                cov[i, j] = cov[j, i] = d["resp_cov_tril"][pos]
                pos += 1
        return cls(
            formula=ModelFormula(responses, tuple(d["terms"]), per_response=True),
            columns=tuple(d["columns"]),
            response_names=responses,
            coef=np.asarray(d["coef"], dtype=float),
            ar_corr=float(d["ar_corr"]),
            resp_cov=cov,
            latent_scores=np.asarray(d["latent_scores"], dtype=float),
            loglik=float(d["loglik"]),
            n_train_times=int(d["n_train_times"]),
            quad_order=int(d["quad_order"]),
            n_iter=int(d["n_iter"]),
            converged=bool(d["converged"]),
            message=d.get("message", ""),
        )


@dataclass(frozen=True)
class MmremForecastConfig:
    """Forecast variant plus its knobs.

    MMREM1/MMREM2 plug in each subject's posterior latent score and differ
    in which columns of the extended Kronecker root feed the loadings;
    MMREM3 draws the score ``k_draws`` times and takes the per-cell median
    probability; MMREM4 sets the score to zero.
    """

    variant: str
    k_draws: int = 150
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidArgumentError(
                f"unknown variant {self.variant!r}; choose from {VARIANTS}"
            )
        if self.variant == "MMREM3" and self.k_draws < 1:
            raise InvalidArgumentError("MMREM3 needs k_draws >= 1")


def _layout(train: LongitudinalDataset, formula: ModelFormula):
    design = design_matrix(train, formula)
    cube = design.as_cube()  # (N, T, p)
    resp_idx = [train.response_index(r) for r in formula.responses]
    y = train.responses[:, :, resp_idx]
    mask = ~np.isnan(y)
    return design, cube, np.nan_to_num(y, nan=0.0), mask


def _marginal_probs(cube, beta):
    return np.clip(expit(np.einsum("ntp,kp->ntk", cube, beta)), P_FLOOR, 1 - P_FLOOR)


def _cell_loglik(delta, load, y, mask, z, sign=None):
    """Log-likelihood contributions summed over cells, for each z node.

    delta, y, mask: (N, T, k); load: (T, k); z: (Q,).  Returns (N, Q).
    ``sign`` may carry the precomputed masked (2y - 1).
    """
    if sign is None:
        sign = np.where(mask, 2.0 * y - 1.0, 0.0)
    eta = delta[..., None] + load[None, :, :, None] * z  # (N,T,k,Q)
    ll = log_expit(sign[..., None] * eta)
    ll = np.where(mask[..., None], ll, 0.0)
    return ll.sum(axis=(1, 2))


def _unpack_batch(thetas, k, p, fix_ar_corr=None):
    """Vectorized _unpack over a (B, d) parameter stack."""
    b = thetas.shape[0]
    beta = thetas[:, : k * p].reshape(b, k, p)
    pos = k * p
    if fix_ar_corr is not None:
        gamma = np.full(b, float(fix_ar_corr))
    else:
        gamma = np.clip(np.tanh(thetas[:, pos]), -GAMMA_CAP, GAMMA_CAP)
        pos += 1
    chol = np.zeros((b, k, k))
    for i in range(k):
        for j in range(i + 1):
            v = thetas[:, pos]
            chol[:, i, j] = np.exp(v) if i == j else v
            pos += 1
    return beta, gamma, chol @ np.transpose(chol, (0, 2, 1))


def _loading_grid_batch(gammas, resp_covs, t_count):
    """Per-parameter-vector loading grids, shape (B, T, k)."""
    idx = np.arange(t_count)
    lag = np.abs(idx[:, None] - idx[None, :]).astype(float)
    m1 = np.where(
        lag[None] == 0.0, 1.0, gammas[:, None, None] ** lag[None]
    )
    w1, v1 = np.linalg.eigh(m1)
    s1 = (v1 * np.sqrt(np.clip(w1, 0.0, None))[:, None, :]) @ np.transpose(v1, (0, 2, 1))
    w2, v2 = np.linalg.eigh(resp_covs)
    s2 = (v2 * np.sqrt(np.clip(w2, 0.0, None))[:, None, :]) @ np.transpose(v2, (0, 2, 1))
    return s1.sum(axis=2)[:, :, None] * s2.sum(axis=2)[:, None, :]


def fit_mmrem(
    train: LongitudinalDataset,
    formula: ModelFormula,
    quad_order: int = DEFAULT_QUAD,
    max_iter: int = 300,
    warmup_iter: int = 10,
    ftol: float = 1e-8,
    gtol: float = 1e-4,
    start: np.ndarray | None = None,
    fix_ar_corr: float | None = None,
) -> MmremFit:
    """Maximum-likelihood fit.

    The per-subject likelihood integrates the product of Bernoulli cell
    probabilities over the scalar latent score with ``quad_order``-point
    Gauss-Hermite quadrature; the intercepts are re-solved from the
    convolution equation at every evaluation.  Coefficients start at the
    per-response pooled logistic estimates.  The central finite-difference
    gradient evaluates all perturbed points in one vectorized pass.
    """
    if not formula.per_response:
        raise InvalidArgumentError("MMREM uses response-specific coefficients")
    design, cube, y, mask = _layout(train, formula)
    n, t_count, p = cube.shape
    k = len(formula.responses)
    rule = gauss_hermite(quad_order)
    z = rule.std_normal_nodes
    logw = np.log(rule.std_normal_weights)

    delta_cache: dict = {}
    sign = np.where(mask, 2.0 * y - 1.0, 0.0)

    def nll_batch(thetas):
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        b = thetas.shape[0]
        bad = ~np.isfinite(thetas).all(axis=1)
        safe = np.where(bad[:, None], 0.0, thetas)
        beta, gamma, resp_cov = _unpack_batch(safe, k, p, fix_ar_corr)
        p_marg = np.clip(
            expit(np.einsum("ntp,bkp->bntk", cube, beta)), P_FLOOR, 1 - P_FLOOR
        )
        sd = np.sqrt(np.einsum("bkk->bk", resp_cov))  # (B, k) diagonal roots
        sd_full = np.broadcast_to(sd[:, None, None, :], p_marg.shape)
        delta = _solve_intercept_batch(
            p_marg, sd_full, rule, x0=delta_cache.get(b)
        )
        delta_cache[b] = delta
        load = _loading_grid_batch(gamma, resp_cov, t_count)  # (B, T, k)
        eta = delta[..., None] + load[:, None, :, :, None] * z
        ll = log_expit(sign[None, ..., None] * eta)
        ll = np.where(mask[None, ..., None], ll, 0.0).sum(axis=(2, 3))  # (B, N, Q)
        out = -logsumexp(ll + logw, axis=2).sum(axis=1)
        out[bad] = 1e12
        return out

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

    # box constraints keep the transformed parameters off the saturation
    # boundaries (|gamma| -> 1, exploding variances) on flat ridges; the
    # Cholesky bounds cap response variances near 60, an order of magnitude
    # above typical binary-scale estimates
    bounds = [(None, None)] * (k * p)
    if fix_ar_corr is None:
        bounds.append((np.arctanh(-0.99), np.arctanh(0.99)))
    for i in range(k):
        for j in range(i + 1):
            bounds.append((-3.5, 1.7) if i == j else (-5.5, 5.5))

    t0 = time.perf_counter()
    if start is None:
        beta0 = np.empty((k, p))
        for j, r in enumerate(formula.responses):
            sub = ModelFormula((r,), formula.terms, per_response=True)
            beta0[j] = fit_gee(train, sub, "independence").coef
        start = _pack(beta0, 0.3, np.eye(k), fix_ar_corr)
        # the marginal constraint keeps the coefficient layer near its
        # pooled start, so warm up the latent parameters alone first
        # (cheap, low dimension), then polish everything jointly
        n_latent = len(start) - k * p
        if n_latent > 0:
            fixed = start[: k * p]

            def nll_latent_batch(sub):
                sub = np.atleast_2d(sub)
                full = np.concatenate(
                    [np.repeat(fixed[None], sub.shape[0], axis=0), sub], axis=1
                )
                return nll_batch(full)

            def grad_latent(sub):
                d = len(sub)
                steps = 1e-5 * np.maximum(1.0, np.abs(sub))
                pts = np.repeat(sub[None], 2 * d, axis=0)
                rows = np.arange(d)
                pts[2 * rows, rows] += steps
                pts[2 * rows + 1, rows] -= steps
                vals = nll_latent_batch(pts)
                return (vals[0::2] - vals[1::2]) / (2.0 * steps)

            warm = minimize(
                lambda sub: float(nll_latent_batch(sub[None])[0]),
                start[k * p :],
                jac=grad_latent,
                method="L-BFGS-B",
                bounds=bounds[k * p :],
                options={"maxiter": warmup_iter, "ftol": ftol, "gtol": gtol},
            )
            start = np.concatenate([fixed, warm.x])
            delta_cache.clear()

    res = minimize(
        nll,
        start,
        jac=grad,
        method="L-BFGS-B",
        bounds=bounds,
        options={"maxiter": max_iter, "ftol": ftol, "gtol": gtol},
    )
    elapsed = time.perf_counter() - t0
    beta, gamma, resp_cov = _unpack(res.x, k, p, fix_ar_corr)
    grad_norm = float(np.abs(res.jac).max()) if res.jac is not None else np.nan
    if not np.isfinite(res.fun):
        raise ConvergenceError(
            "MMREM optimization diverged", last_iterate=res.x
        )
    message = f"{res.message} (grad {grad_norm:.2e}, {elapsed:.1f}s)"
    if np.any(np.diag(resp_cov) < 1e-8):
        message += "; response covariance at boundary"

    p_marg = _marginal_probs(cube, beta)
    sd = np.broadcast_to(np.sqrt(np.diag(resp_cov))[None, None, :], p_marg.shape)
    delta = _solve_intercept_batch(p_marg, sd, rule)
    load = _loading_grid(gamma, resp_cov, t_count)
    per_node = _cell_loglik(delta, load, y, mask, z)
    log_post = per_node + logw
    log_norm = logsumexp(log_post, axis=1)
    zhat = np.exp(log_post - log_norm[:, None]) @ z

    return MmremFit(
        formula=formula,
        columns=design.columns,
        response_names=formula.responses,
        coef=beta,
        ar_corr=float(gamma),
        resp_cov=resp_cov,
        latent_scores=zhat,
        loglik=-float(res.fun),
        n_train_times=t_count,
        quad_order=quad_order,
        n_iter=int(res.nit),
        converged=bool(res.success or grad_norm < 10 * gtol),
        message=message,
    )


def standard_errors_mmrem(fit: MmremFit, train: LongitudinalDataset) -> dict:
    """Observed-information standard errors at the fitted parameters.

    Returns {"coef": (k, p) array, "ar_corr": float on the atanh scale,
    "packed": full vector} from the finite-difference Hessian of the
    negative log-likelihood.
    """
    design, cube, y, mask = _layout(train, fit.formula)
    n, t_count, p = cube.shape
    k = fit.n_responses
    rule = gauss_hermite(fit.quad_order)
    z = rule.std_normal_nodes
    logw = np.log(rule.std_normal_weights)

    def nll(theta):
        beta, gamma, resp_cov = _unpack(theta, k, p)
        p_marg = _marginal_probs(cube, beta)
        sd = np.broadcast_to(np.sqrt(np.diag(resp_cov))[None, None, :], p_marg.shape)
        delta = _solve_intercept_batch(p_marg, sd, rule)
        load = _loading_grid(gamma, resp_cov, t_count)
        per_node = _cell_loglik(delta, load, y, mask, z)
        return -float(logsumexp(per_node + logw, axis=1).sum())

    theta = _pack(fit.coef, fit.ar_corr, fit.resp_cov)
    hess = central_hessian(nll, theta)
    cov = _information_inverse(hess)
    se = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    return {
        "coef": se[: k * p].reshape(k, p),
        "ar_corr": float(se[k * p]),
        "packed": se,
    }


def posterior_latent_score(
    fit: MmremFit, y_subject: np.ndarray, x_subject: np.ndarray, mode: str = "mean"
) -> float:
    """Posterior summary of one subject's latent score.

    ``y_subject`` is (T, k) with NaN for missing cells, ``x_subject`` is
    (T, p) design rows on the training grid.  ``mode`` selects the
    posterior mean (default) or mode.
    """
    y = np.asarray(y_subject, dtype=float)
    x = np.asarray(x_subject, dtype=float)
    t_count, k = y.shape
    if x.shape != (t_count, fit.coef.shape[1]):
        raise ShapeError(
            f"design {x.shape} does not match (T={t_count}, p={fit.coef.shape[1]})"
        )
    mask = ~np.isnan(y)
    if not mask.any():
        raise InvalidArgumentError("subject has no observed cells")
    rule = gauss_hermite(fit.quad_order)
    p_marg = _marginal_probs(x[None], fit.coef)[0]
    sd = np.broadcast_to(np.sqrt(np.diag(fit.resp_cov))[None, :], p_marg.shape)
    delta = _solve_intercept_batch(p_marg, sd, rule)
    load = _loading_grid(fit.ar_corr, fit.resp_cov, t_count)
    z = rule.std_normal_nodes
    per_node = _cell_loglik(
        delta[None], load, np.nan_to_num(y, nan=0.0)[None], mask[None], z
    )[0]
    logw = np.log(rule.std_normal_weights)
    if mode == "mean":
        post = per_node + logw
        post -= logsumexp(post)
        return float(np.exp(post) @ z)
    if mode == "mode":
        # dense grid + parabolic refinement of the log posterior
        grid = np.linspace(-8.0, 8.0, 4001)
        eta = delta[:, :, None] + load[:, :, None] * grid
        ll = np.where((y == 1.0)[:, :, None], log_expit(eta), log_expit(-eta))
        ll = np.where(mask[:, :, None], ll, 0.0).sum(axis=(0, 1)) - 0.5 * grid**2
        i = int(np.argmax(ll))
        if 0 < i < len(grid) - 1:
            y0, y1, y2 = ll[i - 1], ll[i], ll[i + 1]
            denom = y0 - 2 * y1 + y2
            shift = 0.5 * (y0 - y2) / denom if denom != 0 else 0.0
            return float(grid[i] + shift * (grid[1] - grid[0]))
        return float(grid[i])
    raise InvalidArgumentError(f"unknown mode {mode!r}")


def _forecast_loadings(fit: MmremFit, horizon: int, variant: str) -> np.ndarray:
    """Loadings for forecast cells, shape (horizon, k)."""
    t_total = fit.n_train_times + horizon
    s1 = sym_sqrt(ar1_matrix(fit.ar_corr, t_total))
    s2 = sym_sqrt(fit.resp_cov)
    if variant == "MMREM2":
        time_part = s1[fit.n_train_times :, fit.n_train_times :].sum(axis=1)
    else:
        time_part = s1[fit.n_train_times :, :].sum(axis=1)
    return np.outer(time_part, s2.sum(axis=1))


def forecast_mmrem(
    fit: MmremFit, xhat_design: DesignMatrix, config: MmremForecastConfig
) -> np.ndarray:
    """Forecast success probabilities, shape (N, horizon, k).

    The AR-1 time correlation is extended over the forecast window, the
    intercepts are re-solved from the forecast marginals (these do not
    involve the AR parameter), and the latent score enters according to
    the variant.
    """
    if xhat_design.columns != fit.columns:
        raise ShapeError(
            f"forecast design columns {xhat_design.columns} do not match fit "
            f"columns {fit.columns}"
        )
    cube = xhat_design.as_cube()
    n, horizon, _ = cube.shape
    if horizon < 1:
        raise InvalidArgumentError("horizon must be >= 1")
    if n != len(fit.latent_scores):
        raise ShapeError(
            f"{n} subjects in forecast design, fit has {len(fit.latent_scores)}"
        )
    rule = gauss_hermite(fit.quad_order)
    p_marg = _marginal_probs(cube, fit.coef)
    sd = np.broadcast_to(np.sqrt(np.diag(fit.resp_cov))[None, None, :], p_marg.shape)
    delta = _solve_intercept_batch(p_marg, sd, rule)
    load = _forecast_loadings(fit, horizon, config.variant)

    if config.variant == "MMREM4":
        return expit(delta)
    if config.variant in ("MMREM1", "MMREM2"):
        zvec = fit.latent_scores
        return expit(delta + load[None] * zvec[:, None, None])
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    draws = rng.standard_normal((n, config.k_draws))
    probs = expit(delta[:, :, :, None] + load[None, :, :, None] * draws[:, None, None, :])
    return np.median(probs, axis=-1)


def fitted_probs_mmrem(
    fit: MmremFit,
    train: LongitudinalDataset,
    variant: str = "MMREM1",
    k_draws: int = 150,
    seed: int = 0,
) -> np.ndarray:
    """In-sample fitted probabilities on the training window, (N, T, k).

    All variants share the full-column in-sample loadings (MMREM1 and
    MMREM2 coincide here); they differ only in how the latent score is
    plugged in.
    """
    if variant not in VARIANTS:
        raise InvalidArgumentError(f"unknown variant {variant!r}")
    design, cube, _, _ = _layout(train, fit.formula)
    rule = gauss_hermite(fit.quad_order)
    p_marg = _marginal_probs(cube, fit.coef)
    sd = np.broadcast_to(np.sqrt(np.diag(fit.resp_cov))[None, None, :], p_marg.shape)
    delta = _solve_intercept_batch(p_marg, sd, rule)
    load = _loading_grid(fit.ar_corr, fit.resp_cov, fit.n_train_times)
    if variant == "MMREM4":
        return expit(delta)
    if variant in ("MMREM1", "MMREM2"):
        return expit(delta + load[None] * fit.latent_scores[:, None, None])
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    draws = rng.standard_normal((cube.shape[0], k_draws))
    probs = expit(delta[:, :, :, None] + load[None, :, :, None] * draws[:, None, None, :])
    return np.median(probs, axis=-1)


def select_k_draws(
    fit: MmremFit,
    xhat_design: DesignMatrix,
    y_true: np.ndarray,
    candidates=(30, 50, 80, 100, 120, 150, 180, 200, 250, 300),
    rel_threshold: float = 0.01,
    seed: int = 0,
) -> dict:
    """Pick the MMREM3 draw count by successive percentage differences.

    Scores ePCP over observed holdout cells for each candidate draw count
    and returns the first candidate whose accuracy changes by less than
    ``rel_threshold`` relative to its predecessor (else the largest).
    """
    from .accuracy import epcp

    y_true = np.asarray(y_true, dtype=float)
    mask = ~np.isnan(y_true)
    scores = []
    for k_draws in candidates:
        cfg = MmremForecastConfig("MMREM3", k_draws=k_draws, seed=seed)
        probs = forecast_mmrem(fit, xhat_design, cfg)
        scores.append(epcp(y_true[mask], probs[mask]))
    chosen = candidates[-1]
    diffs = []
    for prev, cur, k_draws in zip(scores, scores[1:], candidates[1:]):
        rel = abs(cur - prev) / abs(prev) if prev != 0 else np.inf
        diffs.append(rel)
        if rel < rel_threshold:
            chosen = k_draws
            break
    return {"k_draws": chosen, "candidates": tuple(candidates), "epcp": scores, "rel_diffs": diffs}
