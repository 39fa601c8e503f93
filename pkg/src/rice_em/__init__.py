"""Diffusion tensor estimation under Rician noise via Poisson-augmented EM."""

from .baselines import (
    BaselineReport,
    fit_ls,
    fit_rician_direct,
    fit_wls,
    rician_direct_gradient,
    rician_direct_loglik,
)
from .em import (
    DegenerateDataError,
    FitOptions,
    FitReport,
    FitState,
    InitializationError,
    PriorSpec,
    ScoringInfo,
    e_step,
    fisher_info_theta,
    fit_map,
    fit_mle,
    initialize,
    m_step_s0,
    m_step_sigma,
    marginal_loglik,
    score_theta,
    scoring_step,
)
from .metrics import MethodMse, MseTable, SnrCurve, mse_report, raw_snr_curve, signal_curve, snr_curve
from .rician import (
    RicianParams,
    augmented_expectation,
    bessel_ratio_i1_i0,
    log_bessel_i0,
    rician_log_density,
    sample_rician,
)
from .synth import (
    DEFAULT_S0,
    DEFAULT_SEED,
    HIGH_NOISE_SIGMA_SQ,
    LOW_NOISE_SIGMA_SQ,
    AcquisitionScheme,
    GroundTruth,
    VoxelData,
    default_scheme,
    default_truth,
    derive_seed,
    fixture_tensor,
    make_ensemble,
    make_scheme,
    noise_free_signal,
    repulsion_directions,
    synthesize,
)
from .tensor import (
    EigenDecomposition,
    GradientControl,
    TensorParams,
    coefficient_count,
    design_columns,
    diffusivity,
    eigen_2nd_order,
    fractional_anisotropy,
    mean_diffusivity,
    positivity_check,
)

__version__ = "0.1.0"
