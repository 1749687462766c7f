"""Numerical laboratory for architecture-aware optimisation and
kernel/PAC-Bayes generalisation analysis.

The heavy experiment drivers live in :mod:`majorant.experiments` and the
command line front end in :mod:`majorant.cli`; neither is imported here
so that ``import majorant`` stays cheap.
"""

__version__ = "0.1.0"

from .errors import (
    AmbiguousMeanError,
    BalanceError,
    ConfigError,
    DegenerateLayerError,
    DivergedError,
    DomainError,
    IdxConsistencyError,
    IdxFormatError,
    IdxLengthError,
    InsufficientClassError,
    InvalidInputError,
    MajorantError,
    MethodSwitchError,
    NonInterpolationWarning,
    PsdViolationError,
    SingularCurvatureError,
    SingularGramError,
    SubproblemError,
    ZeroGradientSignal,
)
from .numerics import (
    RngStream,
    chol_logdet,
    derive_stream_id,
    frobenius_norm,
    project_hypersphere,
    require_hypersphere,
    sign_pm1,
    spectral_norm,
)
from .optim import (
    MirrorMap,
    PredictorJacobian,
    SmoothObjective,
    cubic_newton_step,
    gauss_newton_step,
    gd_step,
    majorisation_gap,
    mirror_step,
    solve_cubic_subproblem,
)
from .deeplinear import (
    DeepLinearNet,
    ansatz_bounds,
    architecture_aware_update,
    closed_form_eta,
    dln_forward,
    dln_outputs,
    output_scale,
    perturbation_bounds,
    train_dln,
)
from .mlp import (
    MarginReport,
    MlpNet,
    init_rms_one,
    load_checkpoint,
    loss_eval,
    margins,
    mlp_forward,
    mlp_gradient,
    mlp_outputs,
    save_checkpoint,
    train_architecture_aware,
    train_margin_projected,
)
from .kernels import (
    ArccosKernel,
    GaussianKernel,
    GpPosterior,
    GramBundle,
    concentration_sample,
    gp_condition,
    gram_bundle,
    gram_from_matrix,
    interpolation_error_bound,
    margin_posterior,
    min_norm_interpolate,
    nngp_empirical_kernel,
    posterior_variance_distance,
    rkhs_norm,
)
from .bounds import (
    BoundInputs,
    BoundReport,
    OrthantEstimate,
    gp_pac_bayes_bounds,
    kernel_bpm_bounds,
    kernel_complexity,
    kl_bernoulli,
    kl_inverse_bound,
    kl_values,
    orthant_prob,
    pac_bayes_cap,
    stability_bound,
    vc_bound,
)
from .strategies import (
    GaussianDensity,
    InequalityCheck,
    PosteriorSampler,
    StrategyErrors,
    UniformBox,
    extend_to_queries,
    grunbaum_estimate,
    inequality_report,
    sample_orthant,
    sample_spherised,
    strategy_errors,
    strategy_predict,
    write_predictions_csv,
)
from .data import (
    IdxDataset,
    SynthSpec,
    TrainSample,
    load_idx,
    preprocess,
    synth_teacher_data,
)
from .config import apply_schema, load_config, parse_grid, parse_number

__all__ = [name for name in dir() if not name.startswith("_")]
