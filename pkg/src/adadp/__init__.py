"""Differentially private adaptive optimization with per-coordinate noise,
plus a Renyi-DP accountant for subsampled Gaussian mechanisms and the
verification oracles behind its privacy claims.
"""

from .accountant import (
    DEFAULT_ALPHAS,
    CalibrationError,
    DeltaResult,
    EpsilonResult,
    MechanismParams,
    PrivacySpec,
    RdpCurve,
    calibrate_sigma,
    delta_for_epsilon,
    epsilon_for_delta,
    likelihood_ratio_moment,
    rdp_gaussian,
    subsampled_rdp,
)
from .datasets import Dataset, IdxFormatError, load_idx, pca_project, save_idx, synthetic_classification
from .noise import (
    ClipMode,
    ClipSettings,
    NoisePlan,
    add_noise,
    allocate_sigmas,
    analytic_dp_delta,
    check_feasibility,
    clipping_mode,
    cosine_similarity_study,
    global_clip,
    global_plan,
    local_clip,
    monte_carlo_dp_delta,
    privacy_loss_variance,
)
from .objectives import (
    AnalyticObjective,
    MlpObjective,
    beale,
    booth,
    himmelblau,
    rosenbrock,
    suite_function,
    test_function_suite,
)
from .optim import (
    Algorithm,
    EmaState,
    PriorSource,
    StepRecord,
    TrainConfig,
    TrainResult,
    adadp_step,
    dpsgd_step,
    rmsprop_step,
    sample_lot,
    sgd_step,
    train,
)
from .seeding import SeedBundle, role_rng

__version__ = "0.1.0"
