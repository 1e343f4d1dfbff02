"""Structure discovery for sparse Gaussian graphical models.

A trainable convolutional edge estimator over empirical covariance
matrices, synthetic (covariance, graph) generators, classical baselines
(graphical lasso, partial-correlation thresholding, Ledoit-Wolf,
support-constrained MLE), and a benchmark harness for structure-recovery
metrics.
"""

from .errors import (
    CalibrationFailed,
    ConfigError,
    CorruptFile,
    DegenerateColumn,
    DegenerateDenominator,
    DegenerateInput,
    DegenerateLabels,
    DivergenceDetected,
    GraphestError,
    InfeasibleSupport,
    NotConverged,
    NotPositiveDefinite,
    ShapeMismatch,
    StaleCache,
)
from .linalg import (
    cholesky,
    empirical_covariance,
    inverse_spd,
    log_det_spd,
    partial_corr_from_precision,
    partial_corr_recursive,
    standardize,
)
from .samplers import (
    GeneratorConfig,
    GraphSample,
    PrecisionSample,
    TrainingExample,
    calibrate_alpha,
    dataset_stream,
    make_training_examples,
    sample_er_substitute,
    sample_gaussian,
    sample_laplace,
    sample_small_world_precision,
    sample_sparse_precision,
)
from .net import (
    EdgeNet,
    NetConfig,
    backward,
    forward,
    init_params,
    load_model,
    receptive_field,
    save_model,
)
from .train import (
    AdamState,
    TrainConfig,
    adam_step,
    cross_entropy_loss,
    fine_tune,
    soft_labels,
    train_loop,
)
from .infer import PermutationSpec, pad_and_predict, predict, predict_ensemble
from .baselines import (
    GlassoResult,
    graphical_lasso,
    graphical_lasso_cv,
    holdout_loglik,
    ledoit_wolf,
    ml_precision_given_support,
    threshold_partial_corr,
)
from .metrics import auc, calibration_error, precision_at_fraction, spearman_stability
from .benchmark import (
    MetricRecord,
    Scenario,
    edge_selection_likelihood_curve,
    permutation_error_correlation,
    run_benchmark,
)

__version__ = "0.1.0"
