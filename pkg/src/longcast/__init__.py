"""Forecasting engine for multivariate longitudinal binary outcomes.

Model families: univariate and multivariate marginal logistic models fit
by GEE (UMM, MMM1, MMM2), a marginalized multivariate random-effects
model (MMREM) with four forecast variants, and a first-order
probit-normal marginalized transition random-effects model (PNMTREM)
with eight forecast methodologies.  Time-varying covariates are forecast
with first- and second-order transition models; binary forecasts are
scored by ePCP and AUROC, continuous ones by MAE and MASE.  A
model-independent simulation generator and a replication harness make
the whole competition reproducible from a single seed.
"""

__version__ = "0.1.0"

from .accuracy import AccuracyReport, aggregate, auroc, epcp, mae, mase
from .covforecast import TransitionFit, fit_tm, forecast_tm
from .dataset import (
    DesignMatrix,
    LongitudinalDataset,
    ModelFormula,
    SplitSpec,
    concat_times,
    design_matrix,
    load_csv,
    split,
    write_csv,
)
from .gee import (
    GeeFit,
    WorkingCorrelation,
    estimate_working_corr,
    fit_gee,
    fitted_marginal,
    forecast_marginal,
)
from .mmrem import (
    MmremFit,
    MmremForecastConfig,
    fit_mmrem,
    fitted_probs_mmrem,
    forecast_mmrem,
    latent_loading,
    posterior_latent_score,
    solve_conditional_intercept,
)
from .numerics import (
    LOGIT,
    PROBIT,
    LinkFunction,
    QuadratureRule,
    ar1_matrix,
    gauss_hermite,
    kronecker,
    mvn_sample,
    newton_solve,
    sym_sqrt,
)
from .pnmtrem import (
    PnmtremFit,
    PnmtremForecastConfig,
    fit_baseline,
    fit_pnmtrem,
    fit_transition,
    fitted_probs_pnmtrem,
    forecast_pnmtrem,
    smooth_params,
    solve_probit_intercept,
    solve_transition_intercept,
)
from .simgen import SimConfig, build_covariance, generate
