"""Kronecker-structured spatio-temporal covariance estimation and prediction."""

__version__ = "0.1.0"

from .kron_core import (
    StDims,
    DontCareMask,
    KronFactorPair,
    rearrange,
    unrearrange,
    dontcare_mask,
    masked_rank_r_fit,
    kron_sum_assemble,
    psd_project,
    gaussian_sample,
    commutation_and_rearrangement_perms,
)
from .cov_est import (
    FrameSeries,
    SampleCovariance,
    KronSumModel,
    sliding_window_samples,
    sample_covariance,
    to_correlation,
    estimate_kron_ls,
    estimate_kron_dl,
    regularized_scm,
    kron_spectrum,
)
from .predictor import (
    PredictionTask,
    LinearPredictor,
    build_task_forward,
    build_task_partial,
    fit_predictor,
    predict,
    zeroth_order_residuals,
    reconstruct_from_residual,
)
from .crb import (
    CrbReport,
    fisher_crb_sigma,
    crb_unstructured,
    predictor_jacobian,
    crb_predictor_coeffs,
    asymptotic_error_cov,
    predicted_rmse_curve,
)
from .harness import (
    ExperimentConfig,
    ExperimentResult,
    run_prediction_sweep,
    run_rank_sweep,
    run_partial_sweep,
    series_pipeline,
)
from .errors import StkronError, UsageError, DataError, NumericalError, ConditioningError
