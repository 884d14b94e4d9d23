"""Shared numerical kernels.

Gauss-Hermite quadrature, safeguarded scalar and vectorized root finding,
Kronecker products, symmetric matrix square roots, AR-1 correlation
builders, multivariate normal sampling, link functions, and
finite-difference derivative helpers used by the model fitters.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy.special import expit, log_expit, logit, ndtr, ndtri

from .errors import ConvergenceError, InvalidArgumentError, NotPSDError

SQRT_PI = math.sqrt(math.pi)
SQRT_2 = math.sqrt(2.0)

__all__ = [
    "QuadratureRule",
    "gauss_hermite",
    "newton_solve",
    "solve_increasing",
    "kronecker",
    "sym_sqrt",
    "ar1_matrix",
    "mvn_sample",
    "LinkFunction",
    "LOGIT",
    "PROBIT",
    "central_gradient",
    "central_hessian",
]


@dataclass(frozen=True)
class QuadratureRule:
    """Gauss-Hermite nodes and weights in the physicists' convention.

    ``sum(w_q * f(x_q))`` approximates ``integral f(x) exp(-x^2) dx``; the
    weights sum to sqrt(pi) and the nodes are symmetric about zero.
    """

    nodes: np.ndarray
    weights: np.ndarray

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def std_normal_nodes(self) -> np.ndarray:
        """Nodes rescaled so the rule integrates against a N(0,1) density."""
        return self.nodes * SQRT_2

    @property
    def std_normal_weights(self) -> np.ndarray:
        """Weights rescaled to sum to one (N(0,1) expectation weights)."""
        return self.weights / SQRT_PI

    def integrate(self, f: Callable[[np.ndarray], np.ndarray]) -> float:
        """Integral of ``f(x) exp(-x^2)`` over the real line."""
        return float(np.dot(self.weights, f(self.nodes)))

    def normal_expectation(self, g: Callable[[np.ndarray], np.ndarray]) -> float:
        """Expectation of ``g(Z)`` for standard normal ``Z``."""
        return float(np.dot(self.std_normal_weights, g(self.std_normal_nodes)))


def _hermite_orthonormal(x: np.ndarray, n: int):
    """Orthonormal (w.r.t. exp(-x^2)) Hermite polynomial h_n and h_n' at x."""
    h_prev = np.pi**-0.25 * np.ones_like(x)
    h = np.sqrt(2.0) * x * h_prev
    for k in range(1, n):
        h, h_prev = x * np.sqrt(2.0 / (k + 1)) * h - np.sqrt(k / (k + 1.0)) * h_prev, h
    return h, np.sqrt(2.0 * n) * h_prev


@lru_cache(maxsize=32)
def _gauss_hermite_cached(n: int) -> QuadratureRule:
    # Golub-Welsch: eigenvalues of the symmetric tridiagonal Jacobi matrix of
    # the Hermite recurrence, then two Newton polish steps on the polynomial
    # itself (the eigenvalue roots alone lose ~1e-8 at n=40).
    if n == 1:
        nodes = np.zeros(1)
        weights = np.array([SQRT_PI])
    else:
        off = np.sqrt(np.arange(1, n) / 2.0)
        jacobi = np.diag(off, 1) + np.diag(off, -1)
        nodes = np.sort(np.linalg.eigvalsh(jacobi))
        for _ in range(2):
            val, der = _hermite_orthonormal(nodes, n)
            nodes = nodes - val / der
        _, der = _hermite_orthonormal(nodes, n)
        weights = 2.0 / der**2
        # enforce exact symmetry: roundoff leaves O(1e-15) asymmetries
        nodes = 0.5 * (nodes - nodes[::-1])
        weights = 0.5 * (weights + weights[::-1])
    nodes.flags.writeable = False
    weights.flags.writeable = False
    return QuadratureRule(nodes=nodes, weights=weights)


def gauss_hermite(n: int) -> QuadratureRule:
    """Return the n-point Gauss-Hermite rule (physicists' convention).

    Exact for polynomials of degree <= 2n-1 against exp(-x^2).

    Parameters
    ----------
    n : int
        Number of nodes, 1 <= n <= 128.
    """
    if not isinstance(n, (int, np.integer)) or isinstance(n, bool):
        raise InvalidArgumentError(f"quadrature order must be an integer, got {n!r}")
    if not 1 <= n <= 128:
        raise InvalidArgumentError(f"quadrature order must be in [1, 128], got {n}")
    return _gauss_hermite_cached(int(n))


def newton_solve(
    f: Callable[[float], float],
    fprime: Callable[[float], float],
    x0: float,
    tol: float = 1e-10,
    max_iter: int = 100,
    bracket: tuple[float, float] | None = None,
) -> float:
    """Scalar root of ``f`` by safeguarded Newton iteration.

    Stops when ``|f(x)| < tol``.  When ``bracket=(lo, hi)`` with a sign
    change is supplied, steps leaving the bracket (or with a vanishing
    derivative) fall back to bisection, which guarantees progress.  Without
    a bracket, failure to converge within ``max_iter`` raises
    ``ConvergenceError`` carrying the last iterate.
    """
    if tol <= 0:
        raise InvalidArgumentError(f"tol must be positive, got {tol}")
    lo = hi = None
    flo = None
    if bracket is not None:
        lo, hi = float(bracket[0]), float(bracket[1])
        if lo > hi:
            lo, hi = hi, lo
        flo, fhi = f(lo), f(hi)
        if abs(flo) < tol:
            return lo
        if abs(fhi) < tol:
            return hi
        if np.sign(flo) == np.sign(fhi):
            raise InvalidArgumentError(
                f"bracket [{lo}, {hi}] does not straddle a root "
                f"(f(lo)={flo:.3g}, f(hi)={fhi:.3g})"
            )
    x = float(x0)
    if lo is not None:
        x = min(max(x, lo), hi)
    total = max_iter if bracket is None else max_iter + 200
    for _ in range(total):
        fx = f(x)
        if abs(fx) < tol:
            return x
        if lo is not None:
            if np.sign(fx) == np.sign(flo):
                lo = x
            else:
                hi = x
        dfx = fprime(x)
        if dfx != 0 and np.isfinite(dfx):
            step = fx / dfx
            cand = x - step
        else:
            cand = math.nan
        if lo is not None and not (lo < cand < hi):
            cand = 0.5 * (lo + hi)  # bisect when Newton leaves the bracket
        if not np.isfinite(cand):
            if lo is None:
                raise ConvergenceError(
                    f"Newton iteration diverged at x={x:.6g}", last_iterate=x
                )
            cand = 0.5 * (lo + hi)
        x = cand
    raise ConvergenceError(
        f"no convergence after {max_iter} iterations (last |f|={abs(f(x)):.3g})",
        last_iterate=x,
    )


def solve_increasing(
    f: Callable[[np.ndarray], np.ndarray] | None,
    fprime: Callable[[np.ndarray], np.ndarray] | None,
    target: np.ndarray,
    x0: np.ndarray,
    lo: np.ndarray,
    hi: np.ndarray,
    tol: float = 1e-9,
    max_iter: int = 100,
    value_and_slope: Callable[[np.ndarray], tuple] | None = None,
) -> np.ndarray:
    """Vectorized solve of ``f(x) = target`` for ``f`` increasing in ``x``.

    ``lo``/``hi`` must bracket the solutions elementwise.  Newton steps are
    kept inside the shrinking bracket; exits fall back to bisection, so the
    solve cannot escape.  ``value_and_slope`` may supply f and f' from one
    shared computation (the hot solvers share an expit/pdf evaluation).
    Used for the marginal-intercept equations, which are strictly monotone.
    """
    if value_and_slope is None:
        value_and_slope = lambda v: (f(v), fprime(v))
    target = np.asarray(target, dtype=float)
    x = np.broadcast_to(np.asarray(x0, dtype=float), target.shape).copy()
    lo = np.broadcast_to(np.asarray(lo, dtype=float), target.shape).copy()
    hi = np.broadcast_to(np.asarray(hi, dtype=float), target.shape).copy()
    np.clip(x, lo, hi, out=x)
    done = np.zeros(target.shape, dtype=bool)
    for _ in range(max_iter):
        fx, dfx = value_and_slope(x)
        resid = fx - target
        # an element is finished when its residual is small or its bracket
        # has collapsed to floating-point width (residual jitter floor)
        done |= np.abs(resid) < tol
        done |= (hi - lo) < 1e-12 * np.maximum(1.0, np.abs(x))
        if done.all():
            return x
        below = resid < 0
        lo = np.where(below & ~done, x, lo)
        hi = np.where(below | done, hi, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = x - resid / dfx
        bad = ~np.isfinite(cand) | (cand <= lo) | (cand >= hi)
        x = np.where(done, x, np.where(bad, 0.5 * (lo + hi), cand))
    resid = np.abs(value_and_slope(x)[0] - target)
    done |= resid < tol
    if done.all():
        return x
    raise ConvergenceError(
        f"vectorized solve left {int(np.sum(~done))} elements "
        f"unconverged (max residual {float(resid.max()):.3g})",
        last_iterate=x,
    )


def kronecker(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Kronecker product: block (i, j) of the result is ``a[i, j] * b``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise InvalidArgumentError("kronecker factors must be non-empty")
    return np.kron(a, b)


def _check_symmetric(m: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise InvalidArgumentError(f"expected a square matrix, got shape {m.shape}")
    scale = max(1.0, float(np.abs(m).max(initial=0.0)))
    if np.abs(m - m.T).max(initial=0.0) > tol * scale:
        raise InvalidArgumentError("matrix is not symmetric")
    return m


def sym_sqrt(m: np.ndarray) -> np.ndarray:
    """Symmetric square root of a PSD matrix via eigendecomposition.

    Eigenvalues in [-1e-10, 0) are treated as roundoff and clipped to zero;
    anything below -1e-6 (relative to the largest eigenvalue) raises
    ``NotPSDError``.  The symmetric root is unique, so results are
    reproducible regardless of basis.
    """
    m = _check_symmetric(m)
    eigvals, eigvecs = np.linalg.eigh(m)
    scale = max(1.0, float(eigvals.max(initial=0.0)))
    if eigvals.min(initial=0.0) < -1e-6 * scale:
        raise NotPSDError(
            f"matrix is not positive semi-definite (min eigenvalue "
            f"{eigvals.min():.3e})"
        )
    root = np.sqrt(np.clip(eigvals, 0.0, None))
    s = (eigvecs * root) @ eigvecs.T
    return 0.5 * (s + s.T)


def ar1_matrix(gamma: float, dim: int) -> np.ndarray:
    """AR-1 correlation matrix: entry (t, s) equals ``gamma ** |t - s|``."""
    if not abs(gamma) < 1:
        raise InvalidArgumentError(f"AR-1 parameter must satisfy |gamma| < 1, got {gamma}")
    if dim < 1:
        raise InvalidArgumentError(f"dimension must be positive, got {dim}")
    idx = np.arange(dim)
    return np.power(float(gamma), np.abs(idx[:, None] - idx[None, :]))


def mvn_sample(
    mean: np.ndarray, cov: np.ndarray, n: int, seed: int
) -> np.ndarray:
    """Draw ``n`` multivariate normal vectors, deterministic under ``seed``.

    The covariance is factored by its symmetric square root, so any PSD
    matrix (including rank-deficient ones) is accepted.
    """
    mean = np.asarray(mean, dtype=float)
    factor = sym_sqrt(cov)
    if mean.shape != (factor.shape[0],):
        raise InvalidArgumentError(
            f"mean length {mean.shape} does not match covariance dim {factor.shape[0]}"
        )
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    z = rng.standard_normal((n, len(mean)))
    return mean + z @ factor


@dataclass(frozen=True)
class LinkFunction:
    """Binary-response link: maps probabilities to the linear scale and back."""

    kind: str

    def __post_init__(self):
        if self.kind not in ("logit", "probit"):
            raise InvalidArgumentError(f"unknown link kind {self.kind!r}")

    def link(self, p):
        """Probability -> linear predictor."""
        return logit(p) if self.kind == "logit" else ndtri(p)

    def inverse(self, eta):
        """Linear predictor -> probability."""
        return expit(eta) if self.kind == "logit" else ndtr(eta)

    def log_inverse(self, eta):
        """log of ``inverse(eta)``, computed stably."""
        if self.kind == "logit":
            return log_expit(eta)
        from scipy.special import log_ndtr

        return log_ndtr(eta)


LOGIT = LinkFunction("logit")
PROBIT = LinkFunction("probit")


def central_gradient(
    f: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = 1e-5
) -> np.ndarray:
    """Central finite-difference gradient with steps relative to |x|."""
    x = np.asarray(x, dtype=float)
    grad = np.zeros_like(x)
    for i in range(x.size):
        h = rel_step * max(1.0, abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += h
        xm[i] -= h
        grad[i] = (f(xp) - f(xm)) / (2.0 * h)
    return grad


def _information_inverse(hess: np.ndarray, rel_floor: float = 1e-8) -> np.ndarray:
    """Invert an observed-information matrix with eigenvalue flooring.

    Weakly identified directions give near-zero (or, through
    finite-difference noise, slightly negative) curvature; flooring turns
    those into large-but-finite variances instead of zeros or blow-ups.
    """
    eigvals, eigvecs = np.linalg.eigh(hess)
    floor = max(eigvals.max(initial=0.0), 1.0) * rel_floor
    inv = 1.0 / np.maximum(eigvals, floor)
    return (eigvecs * inv) @ eigvecs.T


def central_hessian(
    f: Callable[[np.ndarray], float], x: np.ndarray, rel_step: float = 1e-4
) -> np.ndarray:
    """Central finite-difference Hessian (used for observed-information SEs)."""
    x = np.asarray(x, dtype=float)
    d = x.size
    steps = np.array([rel_step * max(1.0, abs(v)) for v in x])
    hess = np.zeros((d, d))
    f0 = f(x)
    for i in range(d):
        ei = np.zeros(d)
        ei[i] = steps[i]
        fpp = f(x + ei)
        fmm = f(x - ei)
        hess[i, i] = (fpp - 2.0 * f0 + fmm) / steps[i] ** 2
        for j in range(i + 1, d):
            ej = np.zeros(d)
            ej[j] = steps[j]
            fij = f(x + ei + ej) - f(x + ei - ej) - f(x - ei + ej) + f(x - ei - ej)
            hess[i, j] = hess[j, i] = fij / (4.0 * steps[i] * steps[j])
    return hess
