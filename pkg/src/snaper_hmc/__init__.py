"""Multi-chain adaptive HMC with learned trajectory length."""

from .adaptation import AdaptConfig, FrozenHyper, adaptive_step, finalize_hyperparameters
from .criteria import CriterionKind, criterion
from .hmc import ChainState, hmc_propose, leapfrog
from .targets import TargetModel, make_diag_gaussian, make_logistic_regression

__all__ = [
    "AdaptConfig",
    "ChainState",
    "CriterionKind",
    "FrozenHyper",
    "TargetModel",
    "adaptive_step",
    "criterion",
    "finalize_hyperparameters",
    "hmc_propose",
    "leapfrog",
    "make_diag_gaussian",
    "make_logistic_regression",
]
