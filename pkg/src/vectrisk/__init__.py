"""Sparse Poisson count prediction with automatic interaction expansion,
L1-penalized fitting, two-level stratified cross-validation, debiased
refits, and stability-based variable selection strategies."""

from .data import (
    Dataset,
    GroupSpec,
    Variable,
    assemble_group,
    read_dataset,
    recode_quartiles,
    recode_with_edges,
    validate_dataset,
    write_dataset,
)
from .dcv import (
    CvCurve,
    CvReport,
    DcvConfig,
    FoldPlan,
    debias,
    inner_cv,
    make_stratified_folds,
    presence,
    run_lolo_dcv,
    select_lambdas,
)
from .errors import NumericalError, ValidationError, VectriskError
from .glm import (
    FitResult,
    PoissonGLM,
    deviance_ratio,
    deviance_unit,
    fit_glm,
    log_density,
    null_deviance,
    poisson_deviance,
    predict,
    predict_mu,
)
from .interactions import (
    DesignMatrix,
    GroupIndex,
    cross_categorical_categorical,
    cross_numeric_categorical,
    cross_numeric_numeric,
    expand_interactions,
)
from .lasso import (
    KktReport,
    LambdaGrid,
    PathFit,
    PenalizedFit,
    PoissonLasso,
    fit_path,
    fit_penalized,
    kkt_check,
    lambda_grid,
    penalized_objective,
    soft_threshold,
)
from .simulate import (
    CovariableSpec,
    RecoveryScore,
    SimSpec,
    Truth,
    default_scenario,
    score_recovery,
    simulate_dataset,
)
from .strategies import (
    QualityCriteria,
    SelectionResult,
    backward_glm,
    frequent_variables,
    quality_criteria,
    run_strategy,
)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
