"""Recalibration of classifiers under covariate shift.

Temperature scaling with importance weights from a calibrated
source-discriminator, optionally on adversarially learned
indistinguishable features, plus exact checks of the underlying
calibration-error bound on finite domains.
"""

from .calibrator import (
    METHODS,
    CalibrationBatch,
    Forecaster,
    PipelineConfig,
    PipelineData,
    fit_temperature,
    run_method,
    train_classifier,
    weighted_brier,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .discriminator import SourceDiscriminator, clamp_g, predict_g, weight_from_g
from .errors import (
    BoundViolation,
    ConfigError,
    DivergedError,
    InvalidInputError,
    ParseError,
    ShapeError,
    ShiftcalError,
    SupportError,
)
from .featlearn import AdversarialConfig, PsiArtifacts, retrain_discriminator, train_indistinguishable
from .kernels import BACKEND
from .metrics import (
    BoundReport,
    EceReport,
    bound_chain,
    brier_decomposition,
    ece,
    iw_distribution_report,
    overconfident_ece,
    reliability_bins,
    theorem1_bound,
)
from .numerics import DenseNet, SgdConfig, softmax
from .scenarios import Dataset, EnumerableDomain, Scenario, get_scenario, load_csv, sample, save_csv

__version__ = "0.1.0"

__all__ = [
    "METHODS",
    "CalibrationBatch",
    "Forecaster",
    "PipelineConfig",
    "PipelineData",
    "fit_temperature",
    "run_method",
    "train_classifier",
    "weighted_brier",
    "Checkpoint",
    "load_checkpoint",
    "save_checkpoint",
    "SourceDiscriminator",
    "clamp_g",
    "predict_g",
    "weight_from_g",
    "BoundViolation",
    "ConfigError",
    "DivergedError",
    "InvalidInputError",
    "ParseError",
    "ShapeError",
    "ShiftcalError",
    "SupportError",
    "AdversarialConfig",
    "PsiArtifacts",
    "retrain_discriminator",
    "train_indistinguishable",
    "BACKEND",
    "BoundReport",
    "EceReport",
    "bound_chain",
    "brier_decomposition",
    "ece",
    "iw_distribution_report",
    "overconfident_ece",
    "reliability_bins",
    "theorem1_bound",
    "DenseNet",
    "SgdConfig",
    "softmax",
    "Dataset",
    "EnumerableDomain",
    "Scenario",
    "get_scenario",
    "load_csv",
    "sample",
    "save_csv",
]
