"""Online residual learning: correct offline trajectory predictions online.

Each offline expert is paired with a projected recursive-least-squares model
of its residual error; the corrected experts are mixed by exponential
weights. The bench module measures losses and regret against hindsight
comparators.
"""

from .bench import (
    METHODS,
    MethodConfig,
    RunTrace,
    ade,
    ade_l2,
    empirical_regret,
    hindsight_static_comparator,
    run_method,
)
from .core import (
    OfflinePredictionSet,
    Trajectory,
    corrected_prediction,
    residual,
    squared_loss,
    stack_regressors,
)
from .datagen import SyntheticScenario, ExpertSpec, generate, load_offline_predictions, load_trajectory
from .ensemble import CorrectedExpert, ExpertEnsemble, aggregate, ensemble_init, update_weights
from .rls import KStepLearnerBank, RlsLearner, bank_init, bank_step, project, rls_init, rls_predict, rls_update
from .tuning import exp_concavity_alpha, expert_regret_term, forgetting_factor, lambda_max, path_length

__all__ = [
    "METHODS",
    "CorrectedExpert",
    "ExpertEnsemble",
    "ExpertSpec",
    "KStepLearnerBank",
    "MethodConfig",
    "OfflinePredictionSet",
    "RlsLearner",
    "RunTrace",
    "SyntheticScenario",
    "Trajectory",
    "ade",
    "ade_l2",
    "aggregate",
    "bank_init",
    "bank_step",
    "corrected_prediction",
    "empirical_regret",
    "ensemble_init",
    "exp_concavity_alpha",
    "expert_regret_term",
    "forgetting_factor",
    "generate",
    "hindsight_static_comparator",
    "lambda_max",
    "load_offline_predictions",
    "load_trajectory",
    "path_length",
    "project",
    "residual",
    "rls_init",
    "rls_predict",
    "rls_update",
    "run_method",
    "squared_loss",
    "stack_regressors",
    "update_weights",
]
