import json

import numpy as np
import pytest
from scipy.special import expit, ndtri

from longcast.dataset import LongitudinalDataset, ModelFormula, design_matrix
from longcast.errors import (
    EstimationError,
    InvalidArgumentError,
    RankDeficiencyError,
    ShapeError,
)
from longcast.gee import (
    GeeFit,
    WorkingCorrelation,
    build_correlation,
    estimate_working_corr,
    fit_gee,
    fitted_marginal,
    forecast_marginal,
)


def logistic_mle_oracle(x, y, tol=1e-12, max_iter=200):
    """Independent Newton-Raphson logistic MLE (no shared code path)."""
    beta = np.zeros(x.shape[1])
    for _ in range(max_iter):
        p = 1.0 / (1.0 + np.exp(-(x @ beta)))
        w = p * (1 - p)
        score = x.T @ (y - p)
        info = (x * w[:, None]).T @ x
        step = np.linalg.solve(info, score)
        beta = beta + step
        if np.abs(step).max() < tol:
            break
    return beta


def make_panel(y, covariates, times=None):
    n, t, k = y.shape
    return LongitudinalDataset(
        subjects=tuple(range(n)),
        times=np.arange(1, t + 1, dtype=float) if times is None else times,
        response_names=tuple(f"y{j+1}" for j in range(k)),
        responses=np.asarray(y, dtype=float),
        covariates=covariates,
    )


def gaussian_copula_binary(n, t, beta, x, rho, seed):
    """Binary panel with marginals expit(x beta) and latent exchangeable
    correlation rho (Gaussian copula)."""
    rng = np.random.default_rng(seed)
    shared = rng.standard_normal((n, 1))
    noise = rng.standard_normal((n, t))
    latent = np.sqrt(rho) * shared + np.sqrt(1 - rho) * noise
    p = expit(x @ beta)  # (n, t)
    return (latent < ndtri(p)).astype(float)


class TestFitGeeReductions:
    def test_t1_equals_logistic_mle(self):
        rng = np.random.default_rng(0)
        n = 400
        xcov = rng.normal(size=(n, 1))
        p = expit(0.3 + 0.8 * xcov[:, 0])
        y = (rng.random(n) < p).astype(float)[:, None, None]
        ds = make_panel(y, {"x": xcov})
        fit = fit_gee(ds, ModelFormula(("y1",), ("x",)), "independence", "umm")
        dm = design_matrix(ds, ModelFormula(("y1",), ("x",)))
        oracle = logistic_mle_oracle(dm.x, y[:, 0, 0])
        assert fit.coef == pytest.approx(oracle, abs=1e-6)
        assert fit.converged

    def test_parameter_recovery_exchangeable(self):
        # generating values beta = (0.5, -1.0), latent exchangeable 0.3
        rng = np.random.default_rng(42)
        n, t = 2000, 4
        xcov = rng.normal(size=(n, t))
        x = np.stack([np.ones((n, t)), xcov], axis=-1)
        beta_true = np.array([0.5, -1.0])
        y = gaussian_copula_binary(n, t, beta_true, x, rho=0.3, seed=7)[:, :, None]
        ds = make_panel(y, {"x": xcov})
        fit = fit_gee(ds, ModelFormula(("y1",), ("x",)), "exchangeable", "umm")
        se = fit.coef_se()
        assert np.all(np.abs(fit.coef - beta_true) < 3 * se)

    def test_estimated_rho_positive_under_dependence(self):
        rng = np.random.default_rng(1)
        n, t = 800, 4
        xcov = rng.normal(size=(n, t))
        x = np.stack([np.ones((n, t)), xcov], axis=-1)
        y = gaussian_copula_binary(n, t, np.array([0.0, 0.5]), x, rho=0.5, seed=3)
        ds = make_panel(y[:, :, None], {"x": xcov})
        fit = fit_gee(ds, ModelFormula(("y1",), ("x",)), "exchangeable", "umm")
        assert fit.corr.params["rho"] > 0.1

    def test_kind_formula_mismatch(self):
        ds = make_panel(np.zeros((3, 2, 2)), {})
        with pytest.raises(InvalidArgumentError):
            fit_gee(ds, ModelFormula(("y1", "y2")), "independence", "umm")

    def test_rank_deficiency_names_columns(self):
        rng = np.random.default_rng(2)
        n = 50
        xcov = rng.normal(size=(n, 1))
        y = (rng.random((n, 1, 1)) < 0.5).astype(float)
        ds = make_panel(y, {"x": xcov, "x_copy": xcov.copy()})
        with pytest.raises(RankDeficiencyError):
            fit_gee(ds, ModelFormula(("y1",), ("x", "x_copy")), "independence")


class TestWorkingCorrelation:
    def test_independent_noise_rho_near_zero(self):
        rng = np.random.default_rng(11)
        residuals = [rng.standard_normal(4) for _ in range(1000)]
        est = estimate_working_corr(residuals, "exchangeable")
        assert abs(est.params["rho"]) < 0.05

    def test_identical_pairs_rho_one(self):
        residuals = [np.array([v, v]) for v in np.random.default_rng(0).standard_normal(200)]
        est = estimate_working_corr(residuals, "exchangeable")
        assert est.params["rho"] > 0.95

    def test_unstructured_shape_unit_diagonal(self):
        rng = np.random.default_rng(5)
        residuals = [rng.standard_normal(8) for _ in range(300)]
        est = estimate_working_corr(residuals, "unstructured")
        mat = est.params["matrix"]
        assert mat.shape == (8, 8)
        assert np.allclose(np.diag(mat), 1.0)
        assert np.linalg.eigvalsh(mat).min() >= 0

    def test_ar1_estimates_lag1_average(self):
        rng = np.random.default_rng(9)
        rho = 0.6
        clusters, times = [], []
        for _ in range(2000):
            e = rng.standard_normal(5)
            r = np.empty(5)
            r[0] = e[0]
            for t in range(1, 5):
                r[t] = rho * r[t - 1] + np.sqrt(1 - rho**2) * e[t]
            clusters.append(r)
            times.append(np.arange(5))
        est = estimate_working_corr(clusters, "ar1", times=times)
        assert est.params["rho"] == pytest.approx(rho, abs=0.05)

    def test_too_few_clusters(self):
        with pytest.raises(EstimationError):
            estimate_working_corr([np.zeros(3)], "exchangeable")

    def test_build_ar1_multivariate(self):
        corr = WorkingCorrelation("ar1", {"rho": 0.5, "rho_between": 0.3})
        cell_times = np.repeat(np.arange(3), 2)
        cell_resp = np.tile(np.arange(2), 3)
        mat = build_correlation(corr, cell_times, cell_resp)
        assert mat[0, 2] == pytest.approx(0.5)     # same resp, lag 1
        assert mat[0, 1] == pytest.approx(0.3)     # cross resp, lag 0
        assert mat[0, 3] == pytest.approx(0.15)    # cross resp, lag 1
        assert np.allclose(np.diag(mat), 1.0)


class TestMultivariateLayouts:
    @pytest.fixture
    def bivariate_panel(self):
        rng = np.random.default_rng(8)
        n, t = 500, 3
        xcov = rng.normal(size=(n, t))
        shared = rng.standard_normal((n, 1, 1))
        lat = 0.6 * shared + 0.8 * rng.standard_normal((n, t, 2))
        eta = np.stack([0.4 + 0.9 * xcov, -0.3 + 0.5 * xcov], axis=-1)
        y = (lat < ndtri(expit(eta))).astype(float)
        return make_panel(y, {"x": xcov})

    def test_mmm1_equals_per_response_umm_under_independence(self, bivariate_panel):
        ds = bivariate_panel
        f2 = ModelFormula(("y1", "y2"), ("x",))
        mmm1 = fit_gee(ds, f2, "independence", "mmm1")
        for j, resp in enumerate(("y1", "y2")):
            umm = fit_gee(ds, ModelFormula((resp,), ("x",)), "independence", "umm")
            assert mmm1.coef_by_response[j] == pytest.approx(umm.coef, abs=1e-8)

    def test_mmm2_saturated_reproduces_mmm1(self, bivariate_panel):
        # indicator-saturated shared layout is a reparametrization of the
        # response-specific layout: fitted probabilities agree
        ds = bivariate_panel
        f1 = ModelFormula(("y1", "y2"), ("x",))
        f2 = ModelFormula(
            ("y1", "y2"), ("resp(y2)", "x", "resp(y2):x"), per_response=False
        )
        for corr in ("independence", "exchangeable"):
            mmm1 = fit_gee(ds, f1, corr, "mmm1")
            mmm2 = fit_gee(ds, f2, corr, "mmm2")
            p1 = fitted_marginal(mmm1, ds)
            p2 = fitted_marginal(mmm2, ds)
            assert np.abs(p1 - p2).max() < 1e-6

    def test_unstructured_bivariate_runs(self, bivariate_panel):
        fit = fit_gee(
            bivariate_panel, ModelFormula(("y1", "y2"), ("x",)), "unstructured", "mmm1"
        )
        mat = fit.corr.params["matrix"]
        assert mat.shape == (6, 6)
        assert fit.converged

    def test_missing_cells_complete_case(self, bivariate_panel):
        ds = bivariate_panel
        y = ds.responses.copy()
        y[::7, 1, 0] = np.nan
        ds2 = make_panel(y, dict(ds.covariates))
        fit = fit_gee(ds2, ModelFormula(("y1", "y2"), ("x",)), "exchangeable", "mmm1")
        assert fit.converged


class TestForecastMarginal:
    def make_fit(self, coef, columns=("intercept", "x")):
        formula = ModelFormula(("y1",), tuple(c for c in columns if c != "intercept"))
        return GeeFit(
            kind="umm",
            formula=formula,
            columns=tuple(columns),
            coef_labels=tuple(columns),
            coef=np.asarray(coef, dtype=float),
            corr=WorkingCorrelation("independence"),
            naive_cov=np.eye(len(coef)),
            sandwich_cov=np.eye(len(coef)),
            n_iter=1,
            converged=True,
            final_update=0.0,
        )

    def make_xds(self, values):
        values = np.asarray(values, dtype=float)
        n, t = values.shape
        return LongitudinalDataset(
            subjects=tuple(range(n)),
            times=np.arange(1, t + 1, dtype=float),
            response_names=("y1",),
            responses=np.full((n, t, 1), np.nan),
            covariates={"x": values},
        )

    def test_zero_coef_gives_half(self):
        fit = self.make_fit([0.0, 0.0])
        design = design_matrix(self.make_xds([[1.0, 2.0]]), fit.formula)
        assert np.allclose(forecast_marginal(fit, design), 0.5)

    def test_closed_form(self):
        fit = self.make_fit([0.0, 1.0])
        design = design_matrix(self.make_xds([[2.0]]), fit.formula)
        assert forecast_marginal(fit, design)[0, 0] == pytest.approx(expit(2.0))
        assert forecast_marginal(fit, design)[0, 0] == pytest.approx(0.8808, abs=1e-4)

    def test_frozen_coefficients_ignore_correlation(self):
        fit_a = self.make_fit([0.2, -0.4])
        fit_b = GeeFit(**{**fit_a.__dict__, "corr": WorkingCorrelation("exchangeable", {"rho": 0.7})})
        design = design_matrix(self.make_xds([[1.0, -2.0, 0.5]]), fit_a.formula)
        assert np.array_equal(forecast_marginal(fit_a, design), forecast_marginal(fit_b, design))

    def test_subject_order_invariance(self):
        rng = np.random.default_rng(3)
        vals = rng.normal(size=(6, 2))
        fit = self.make_fit([0.1, 0.9])
        d1 = design_matrix(self.make_xds(vals), fit.formula)
        d2 = design_matrix(self.make_xds(vals[::-1]), fit.formula)
        assert np.allclose(forecast_marginal(fit, d1), forecast_marginal(fit, d2)[::-1])

    def test_column_mismatch_rejected(self):
        fit = self.make_fit([0.0, 1.0])
        other = self.make_xds([[1.0]])
        design = design_matrix(other, ModelFormula(("y1",)))
        with pytest.raises(ShapeError):
            forecast_marginal(fit, design)


class TestSandwichShrinkage:
    def test_variance_halves_with_doubled_n(self):
        rng = np.random.default_rng(123)
        t = 3
        variances = {}
        for n in (500, 1000, 2000):
            reps = []
            for rep in range(12):
                xcov = rng.normal(size=(n, t))
                x = np.stack([np.ones((n, t)), xcov], axis=-1)
                y = gaussian_copula_binary(
                    n, t, np.array([0.2, 0.6]), x, rho=0.3,
                    seed=1000 * n + rep,
                )
                ds = make_panel(y[:, :, None], {"x": xcov})
                fit = fit_gee(ds, ModelFormula(("y1",), ("x",)), "exchangeable", "umm")
                reps.append(fit.sandwich_cov[1, 1])
            variances[n] = np.mean(reps)
        assert variances[1000] == pytest.approx(variances[500] / 2, rel=0.25)
        assert variances[2000] == pytest.approx(variances[1000] / 2, rel=0.25)


class TestSerialization:
    def test_json_round_trip(self):
        rng = np.random.default_rng(4)
        n = 120
        xcov = rng.normal(size=(n, 2))
        y = (rng.random((n, 2, 1)) < 0.5).astype(float)
        ds = make_panel(y, {"x": xcov})
        fit = fit_gee(ds, ModelFormula(("y1",), ("x",)), "exchangeable", "umm")
        back = GeeFit.from_json(fit.to_json())
        assert back.coef == pytest.approx(fit.coef)
        assert back.corr.kind == "exchangeable"
        assert back.corr.params["rho"] == pytest.approx(fit.corr.params["rho"])
        assert json.loads(fit.to_json())["model"] == "gee"
