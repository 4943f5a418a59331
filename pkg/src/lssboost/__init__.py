"""Component-wise gradient boosting for distributional regression.

Every parameter of the response distribution (Gaussian location-scale or
zero-inflated negative binomial) gets its own additive predictor built
from penalized base-learners; per boosting iteration exactly one
(parameter, base-learner) block is updated, with either a fixed or a
shrunk-optimal step length.
"""

from .baselearners import (
    BaseLearnerSpec,
    Graph,
    LearnerKind,
    PSplineOptions,
    load_graph,
    parse_graph,
    solve_lambda_for_df,
)
from .boost import (
    FIXED,
    SHRUNK_OPTIMAL,
    FitState,
    ModelConfig,
    StepMode,
    coefficients_at,
    predict,
    run,
    selected_blocks,
)
from .errors import (
    ConfigurationError,
    DataError,
    DegenerateDirectionError,
    LssBoostError,
    NumericError,
    ParameterDomainError,
    UnboundedDirectionError,
)
from .families import (
    GAUSSIAN_LS,
    ZINB,
    Family,
    FamilySpec,
    ParamState,
    cramer_dist,
    crps_obs,
    negative_gradient,
    nll,
)
from .sim import SettingSpec, StudyReport, TruthBundle, generate, run_study
from .steplength import StepContext, line_search, optimal_step_newton, shrunk
from .tuning import CVPlan, RiskCurve, cv_risk, robust_mstop

__version__ = "0.1.0"

__all__ = [
    "BaseLearnerSpec",
    "Graph",
    "LearnerKind",
    "PSplineOptions",
    "load_graph",
    "parse_graph",
    "solve_lambda_for_df",
    "FIXED",
    "SHRUNK_OPTIMAL",
    "FitState",
    "ModelConfig",
    "StepMode",
    "coefficients_at",
    "predict",
    "run",
    "selected_blocks",
    "ConfigurationError",
    "DataError",
    "DegenerateDirectionError",
    "LssBoostError",
    "NumericError",
    "ParameterDomainError",
    "UnboundedDirectionError",
    "GAUSSIAN_LS",
    "ZINB",
    "Family",
    "FamilySpec",
    "ParamState",
    "cramer_dist",
    "crps_obs",
    "negative_gradient",
    "nll",
    "SettingSpec",
    "StudyReport",
    "TruthBundle",
    "generate",
    "run_study",
    "StepContext",
    "line_search",
    "optimal_step_newton",
    "shrunk",
    "CVPlan",
    "RiskCurve",
    "cv_risk",
    "robust_mstop",
    "__version__",
]
