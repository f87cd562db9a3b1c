"""Online Bayesian parameter inference for state-space models.

SMC2 with nested particle filters, its fixed-window variant with a
kernel-density bridge between observation blocks, an exact-likelihood
sampler for the Gaussian linear model and exact finite-space oracles.
"""

from .errors import DegenerateWeightsError, IngestionError, ParameterDomainError
from .fixed_window import FwConfig, FwState, StepRecord, fw_init, fw_step, run_first_block, run_online
from .kalman import KalmanState, kalman_init, kalman_loglik, kalman_step
from .kde import KdeBridge, bandwidth_rule_a3
from .models import (
    FiniteHMM,
    LevySVParams,
    LinearGaussianParams,
    levy_simulate,
    levy_sv_model,
    lg_model,
    lg_simulate,
)
from .particle import PFState, ess, pf_init, pf_step, run_pf
from .smc2 import Smc2Config, Smc2State, smc2_init, smc2_step

__all__ = [
    "DegenerateWeightsError",
    "FiniteHMM",
    "FwConfig",
    "FwState",
    "IngestionError",
    "KalmanState",
    "KdeBridge",
    "LevySVParams",
    "LinearGaussianParams",
    "PFState",
    "ParameterDomainError",
    "Smc2Config",
    "Smc2State",
    "StepRecord",
    "bandwidth_rule_a3",
    "ess",
    "fw_init",
    "fw_step",
    "kalman_init",
    "kalman_loglik",
    "kalman_step",
    "levy_simulate",
    "levy_sv_model",
    "lg_model",
    "lg_simulate",
    "pf_init",
    "pf_step",
    "run_first_block",
    "run_online",
    "run_pf",
    "smc2_init",
    "smc2_step",
]
