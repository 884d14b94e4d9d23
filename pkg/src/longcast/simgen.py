"""Model-independent simulation generator.

Latent continuous responses and covariates are drawn jointly from a
multivariate normal whose correlation structure is specified by five
lag-indexed families (within response, within covariate, response vs
covariate, between responses, between covariates).  Binary responses are
obtained by dichotomizing the latent responses at zero.

The assembled correlation table need not be consistent: it is projected
to the PSD cone by eigenvalue clipping, the Frobenius projection distance
is recorded, and configurations requiring a projection larger than 5% of
the matrix norm are rejected as structurally inconsistent.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import LongitudinalDataset
from .errors import InvalidArgumentError, StructuralError
from .numerics import sym_sqrt

__all__ = ["SimConfig", "CovarianceModel", "build_covariance", "generate"]

# lag-indexed correlation families, lags 0..7
DEFAULT_WITHIN_RESPONSE = (1.00, 0.90, 0.80, 0.70, 0.60, 0.50, 0.40, 0.30)
DEFAULT_WITHIN_COVARIATE = (1.00, 0.88, 0.76, 0.64, 0.52, 0.40, 0.28, 0.16)
DEFAULT_RESPONSE_COVARIATE = (0.80, 0.70, 0.60, 0.50, 0.40, 0.30, 0.20, 0.10)
DEFAULT_CROSS_RESPONSE = (0.60, 0.55, 0.45, 0.40, 0.35, 0.30, 0.25, 0.20)
DEFAULT_CROSS_COVARIATE = (0.20, 0.18, 0.16, 0.14, 0.12, 0.10, 0.08, 0.06)


@dataclass(frozen=True)
class SimConfig:
    """Configuration of the simulated panel.

    Defaults: 500 subjects over 8 occasions; two latent responses with
    variances 1.5 and 2.5; covariates X1, X3 time-invariant and X2, X4
    time-varying with variances 8, 2.5, 15, 25.
    """

    n_subjects: int = 500
    n_times: int = 8
    response_names: tuple = ("Y1", "Y2")
    response_variances: tuple = (1.5, 2.5)
    covariate_names: tuple = ("X1", "X2", "X3", "X4")
    covariate_variances: tuple = (8.0, 2.5, 15.0, 25.0)
    time_invariant: tuple = ("X1", "X3")
    within_response: tuple = DEFAULT_WITHIN_RESPONSE
    within_covariate: tuple = DEFAULT_WITHIN_COVARIATE
    response_covariate: tuple = DEFAULT_RESPONSE_COVARIATE
    cross_response: tuple = DEFAULT_CROSS_RESPONSE
    cross_covariate: tuple = DEFAULT_CROSS_COVARIATE
    seed: int = 0
    max_projection: float = 0.05

    def __post_init__(self):
        if self.n_subjects < 1 or self.n_times < 1:
            raise InvalidArgumentError("n_subjects and n_times must be positive")
        if len(self.response_variances) != len(self.response_names):
            raise InvalidArgumentError("one variance per response required")
        if len(self.covariate_variances) != len(self.covariate_names):
            raise InvalidArgumentError("one variance per covariate required")
        if any(v <= 0 for v in self.response_variances + self.covariate_variances):
            raise InvalidArgumentError("variances must be positive")
        unknown = set(self.time_invariant) - set(self.covariate_names)
        if unknown:
            raise InvalidArgumentError(f"unknown time-invariant covariates {sorted(unknown)}")
        for fam_name in (
            "within_response",
            "within_covariate",
            "response_covariate",
            "cross_response",
            "cross_covariate",
        ):
            fam = getattr(self, fam_name)
            if len(fam) < self.n_times:
                raise InvalidArgumentError(
                    f"{fam_name} needs correlations for lags 0..{self.n_times - 1}"
                )
            if any(abs(c) > 1 for c in fam):
                raise InvalidArgumentError(f"{fam_name} has correlations outside [-1, 1]")
        for fam_name in ("within_response", "within_covariate"):
            if getattr(self, fam_name)[0] != 1.0:
                raise InvalidArgumentError(f"{fam_name} must be 1 at lag 0")

    @property
    def time_varying(self) -> tuple:
        return tuple(c for c in self.covariate_names if c not in self.time_invariant)


@dataclass(frozen=True)
class CovarianceModel:
    """Assembled joint covariance plus the PSD-projection audit trail.

    ``labels`` names each row: response/covariate name paired with a time
    index, or None for time-invariant covariates (generated once per
    subject and repeated across occasions).
    """

    matrix: np.ndarray
    raw_matrix: np.ndarray
    labels: tuple
    raw_min_eigenvalue: float
    projection_distance: float  # Frobenius, relative to ||raw matrix||


def _labels(config: SimConfig) -> list:
    labels = []
    for t in range(1, config.n_times + 1):
        for r in config.response_names:
            labels.append((r, t))
        for c in config.time_varying:
            labels.append((c, t))
    for c in config.covariate_names:
        if c in config.time_invariant:
            labels.append((c, None))
    return labels


def build_covariance(config: SimConfig) -> CovarianceModel:
    """Assemble the joint covariance over the time-expanded variable vector.

    Correlation families are applied by absolute time lag.  Time-invariant
    covariates correlate with every occasion of the other covariates at
    the lag-0 between-covariate value and are uncorrelated with the
    responses.  The result is scaled by variance products and projected to
    PSD by eigenvalue clipping; a projection farther than
    ``max_projection`` (relative Frobenius) raises ``StructuralError``.
    """
    labels = _labels(config)
    variance = dict(zip(config.response_names, config.response_variances))
    variance.update(zip(config.covariate_names, config.covariate_variances))
    responses = set(config.response_names)

    def corr(a, b):
        (va, ta), (vb, tb) = a, b
        a_resp, b_resp = va in responses, vb in responses
        if ta is None and tb is None:
            return config.cross_covariate[0]
        if ta is None or tb is None:
            # one time-invariant covariate: lag-0 value against covariates,
            # no correlation with responses
            return 0.0 if (a_resp or b_resp) else config.cross_covariate[0]
        lag = abs(ta - tb)
        if a_resp and b_resp:
            return (
                config.within_response[lag]
                if va == vb
                else config.cross_response[lag]
            )
        if a_resp != b_resp:
            return config.response_covariate[lag]
        return (
            config.within_covariate[lag] if va == vb else config.cross_covariate[lag]
        )

    d = len(labels)
    r = np.eye(d)
    for i in range(d):
        for j in range(i + 1, d):
            r[i, j] = r[j, i] = corr(labels[i], labels[j])
    sd = np.sqrt(np.array([variance[v] for v, _ in labels]))
    raw = r * np.outer(sd, sd)

    eigvals, eigvecs = np.linalg.eigh(raw)
    min_eig = float(eigvals.min())
    if min_eig >= 0.0:
        matrix = raw
        distance = 0.0
    else:
        clipped = np.clip(eigvals, 0.0, None)
        matrix = (eigvecs * clipped) @ eigvecs.T
        matrix = 0.5 * (matrix + matrix.T)
        distance = float(np.linalg.norm(matrix - raw) / np.linalg.norm(raw))
        if distance > config.max_projection:
            raise StructuralError(
                f"correlation table is inconsistent: PSD projection moved the "
                f"matrix by {distance:.3f} (relative Frobenius), beyond the "
                f"{config.max_projection:.3f} limit"
            )
    return CovarianceModel(
        matrix=matrix,
        raw_matrix=raw,
        labels=tuple(labels),
        raw_min_eigenvalue=min_eig,
        projection_distance=distance,
    )


def generate(config: SimConfig, cov_model: CovarianceModel | None = None):
    """Draw one simulated panel.

    Returns ``(dataset, latent)`` where ``latent`` holds the continuous
    responses (N, T, k) before dichotomization at zero.  Deterministic
    under ``config.seed``.
    """
    if cov_model is None:
        cov_model = build_covariance(config)
    labels = cov_model.labels
    factor = sym_sqrt(cov_model.matrix)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    draws = rng.standard_normal((config.n_subjects, len(labels))) @ factor

    n, t_count = config.n_subjects, config.n_times
    k = len(config.response_names)
    latent = np.empty((n, t_count, k))
    covariates = {c: np.empty((n, t_count)) for c in config.covariate_names}
    for idx, (name, t) in enumerate(labels):
        if name in config.response_names:
            latent[:, t - 1, config.response_names.index(name)] = draws[:, idx]
        elif t is None:
            covariates[name][:, :] = draws[:, idx][:, None]
        else:
            covariates[name][:, t - 1] = draws[:, idx]

    ds = LongitudinalDataset(
        subjects=tuple(range(1, n + 1)),
        times=np.arange(1, t_count + 1, dtype=float),
        response_names=config.response_names,
        responses=(latent >= 0.0).astype(float),
        covariates=covariates,
        time_invariant=frozenset(config.time_invariant),
    )
    return ds, latent
