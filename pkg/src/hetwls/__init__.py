"""Weighted least squares for misspecified linear models with heteroskedastic errors."""

from .errors import (
    AllFrequenciesSingular,
    DegenerateGroupVariance,
    EmptyGroup,
    EstimationError,
    HetWLSError,
    InvalidGamma,
    InvalidMoments,
    InvalidTarget,
    MissingColumn,
    QuadratureFailure,
    SingularCovariance,
    SingularDesign,
)
from .estimators import (
    AdaptiveGrouped,
    AdaptiveKnown,
    Coordinate,
    FitResult,
    FixedDelta,
    FixedWeights,
    Identity,
    InverseVariance,
    RegressionData,
    Trace,
    WeightMoments,
    confidence_region_contains,
    estimate_A,
    estimate_B,
    estimate_Cm,
    estimate_delta,
    fit,
    nu_hat_1,
    nu_hat_2,
    nu_oracle,
    optimal_weights_grouped,
    optimal_weights_known,
    solve_weighted,
    theoretical_nu,
    wald_statistic,
)
from .periodfit import (
    LightCurve,
    PeriodogramConfig,
    PeriodogramResult,
    amplitudes_phases,
    beta_from_amplitudes,
    downsample,
    fit_at_frequency,
    periodogram,
    recovery_table,
    score_periods,
    synthetic_light_curve,
)
from .simulation import (
    DEFAULT_SIGMA_LAW,
    DEFAULT_STEP_LAW,
    DgpConfig,
    DiscreteSigma,
    Quadratic,
    StepOfX,
    asymptotic_ellipse,
    generate_dataset,
    oracle_quantities,
    run_monte_carlo,
    theoretical_nus,
)

__version__ = "0.1.0"
