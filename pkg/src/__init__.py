"""
Matrix RL Lab - biased upper-confidence matrix RL and meta-learned bias estimators
on synthetic MDPs with linear transition cores
"""

__version__ = "0.1.0"
__author__ = "Matrix RL Lab Team"
__description__ = "Numerical laboratory for biased matrix RL and meta transfer regret"

from .linear_mdp import Features, LinearMdp, MdpSkeleton, RegularityConstants, TransitionCore
from .task_family import TaskFamily, default_family, orthogonal_family, point_mass_family
from .core_regression import ConfidenceEllipsoid, RidgeState
from .buc_agent import RunRecord, run_task
from .meta_learner import MetaRunRecord, estimation_diagnostics, meta_train
from .evaluation import regret_bound_thm3, transfer_regret
from .config import (
    DEFAULT_ALGORITHM_CONFIG,
    DEFAULT_FAMILY_CONFIG,
    DEFAULT_OUTPUT_CONFIG,
    DEFAULT_RUN_CONFIG,
    AlgorithmConfig,
    ExperimentConfig,
    FamilyConfig,
    OutputConfig,
    RunConfig
)

__all__ = [
    'Features',
    'LinearMdp',
    'MdpSkeleton',
    'RegularityConstants',
    'TransitionCore',
    'TaskFamily',
    'default_family',
    'orthogonal_family',
    'point_mass_family',
    'ConfidenceEllipsoid',
    'RidgeState',
    'RunRecord',
    'run_task',
    'MetaRunRecord',
    'estimation_diagnostics',
    'meta_train',
    'regret_bound_thm3',
    'transfer_regret',
    'AlgorithmConfig',
    'ExperimentConfig',
    'FamilyConfig',
    'OutputConfig',
    'RunConfig',
    'DEFAULT_ALGORITHM_CONFIG',
    'DEFAULT_FAMILY_CONFIG',
    'DEFAULT_OUTPUT_CONFIG',
    'DEFAULT_RUN_CONFIG'
]
