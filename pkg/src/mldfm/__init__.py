"""Estimation and finite-sample MSE assessment for multi-level dynamic factor models."""

from .errors import (
    DegeneracyError,
    ExperimentError,
    MldfmError,
    ParameterError,
    RankError,
    SpecError,
    UpdateError,
)
from .ident import check_identification, count_restrictions, rotation_mask
from .montecarlo import ExperimentConfig, ExperimentResult, run_experiment
from .mse import (
    SubsampleConfig,
    ThresholdConfig,
    avar,
    gamma_fpr,
    gamma_hr,
    gamma_true,
    subsample_correction,
    threshold_idio_cov,
)
from .panel import GroupStructure, PanelData, simulate_design
from .pc import FactorEstimate, pc_extract
from .sls import MlFactorEstimate, sls_estimate

__all__ = [
    "DegeneracyError",
    "ExperimentConfig",
    "ExperimentError",
    "ExperimentResult",
    "FactorEstimate",
    "GroupStructure",
    "MlFactorEstimate",
    "MldfmError",
    "PanelData",
    "ParameterError",
    "RankError",
    "SpecError",
    "SubsampleConfig",
    "ThresholdConfig",
    "UpdateError",
    "avar",
    "check_identification",
    "count_restrictions",
    "gamma_fpr",
    "gamma_hr",
    "gamma_true",
    "pc_extract",
    "rotation_mask",
    "run_experiment",
    "simulate_design",
    "sls_estimate",
    "subsample_correction",
    "threshold_idio_cov",
]
