"""Identification-robust inference for linear IV models with many instruments.

The centerpiece is the jackknife K test: a chi-squared-calibrated test
for the structural coefficient built from leave-one-out first-stage
estimates that remain valid however weak the instruments are and however
many of them there are.  It is complemented by the sup-score test with
multiplier-bootstrap critical values, a thresholding combination of the
two driven by a conditioning statistic, confidence sets by grid
inversion, balanced-design diagnostics, and a Monte Carlo harness.
"""

from .data import (
    CollinearityError,
    DataError,
    IVDataset,
    PartialledData,
    drop_collinear_instruments,
    load_csv,
    partial_out_controls,
)
from .hat import (
    DesignDiagnostics,
    HatMatrix,
    custom_hat,
    design_diagnostics,
    effective_dof,
    partial_out_hat,
    projection_hat_deleted,
    ridge_hat,
)
from .inference import (
    BootstrapSpec,
    ConfidenceSet,
    PipelineError,
    TestConfig,
    TestResult,
    chi2_quantile,
    conditioning_quantile,
    evaluate_tests,
    invert_ci,
    jk_test,
    run_test,
    sup_score_critical,
    thresholding_test,
)
from .rho import (
    BasisSpec,
    ConvergenceError,
    RhoModel,
    cross_validate_lambda,
    estimate_rho,
    lambda_max,
    lasso_fit,
    null_residuals,
    post_lasso_refit,
)
from .sim import (
    FstatTable,
    OracleBlock,
    PowerTable,
    SimulationSpec,
    SizeTable,
    expand_regime,
    first_stage_f,
    fstat_demo,
    gen_base_instruments,
    gen_dgp,
    laplace_sample,
    local_power_index,
    oracle_noncentrality,
    power_curve,
    size_experiment,
    strength_factor,
)
from .stats import (
    FirstStage,
    StatisticValue,
    anderson_rubin,
    conditioning_statistic,
    first_stage,
    jk_statistic,
    sup_score,
)

__version__ = "0.1.0"

__all__ = [
    "BasisSpec",
    "BootstrapSpec",
    "CollinearityError",
    "ConfidenceSet",
    "ConvergenceError",
    "DataError",
    "DesignDiagnostics",
    "FirstStage",
    "FstatTable",
    "HatMatrix",
    "IVDataset",
    "OracleBlock",
    "PartialledData",
    "PipelineError",
    "PowerTable",
    "RhoModel",
    "SimulationSpec",
    "SizeTable",
    "StatisticValue",
    "TestConfig",
    "TestResult",
    "anderson_rubin",
    "chi2_quantile",
    "conditioning_quantile",
    "conditioning_statistic",
    "cross_validate_lambda",
    "custom_hat",
    "design_diagnostics",
    "drop_collinear_instruments",
    "effective_dof",
    "estimate_rho",
    "evaluate_tests",
    "expand_regime",
    "first_stage",
    "first_stage_f",
    "fstat_demo",
    "gen_base_instruments",
    "gen_dgp",
    "invert_ci",
    "jk_statistic",
    "jk_test",
    "lambda_max",
    "laplace_sample",
    "lasso_fit",
    "load_csv",
    "local_power_index",
    "null_residuals",
    "oracle_noncentrality",
    "partial_out_controls",
    "partial_out_hat",
    "post_lasso_refit",
    "power_curve",
    "projection_hat_deleted",
    "ridge_hat",
    "run_test",
    "size_experiment",
    "strength_factor",
    "sup_score",
    "sup_score_critical",
    "thresholding_test",
]
