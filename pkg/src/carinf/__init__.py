"""Covariate-adaptive randomization and inference for average treatment effects."""

from .core import AllocationSpec, SubjectRecord, TrialDataset, TrialSummary, summarize
from .dgp import DGPSpec, ZSpec, expected_min_cell, true_theta
from .errors import (
    CarInfError,
    ConfigError,
    ConfigMismatch,
    DataError,
    EmptyCell,
    IncompleteRecord,
    InsufficientCell,
    SingularGram,
)
from .estimators import Contrast, beta_hats, theta_hat, theta_hat_A, theta_hat_B
from .inference import InferenceReport, infer, theorem2_gaps, var_hat_A, var_hat_B, var_hat_U, var_hat_V
from .montecarlo import ScenarioSpec, SimSummary, monte_carlo, run_replication, uv_decomposition_check
from .oracle import theorem1_exact, theorem1_oracle
from .randomizers import SchemeConfig, assign_sequence, classify_type, make_randomizer

__version__ = "0.1.0"
