"""Projected gradient descent with regularized projections for density-based topology optimization."""
from .exceptions import (
    ConfigError,
    DegenerateDesignError,
    DomainError,
    InfeasibleLinearizationError,
    ParameterError,
    ProjectionError,
    SingularSystemError,
    UnsupportedProblemError,
)
from .filtering import FilterKernel, apply_filter, build_filter, filter_chain_rule
from .mesh_fea import (
    BoundaryConditions,
    LinearSystem,
    MaterialModel,
    StructuredGrid,
    assemble_and_solve,
    cantilever,
    compliance_and_gradient,
    element_stiffness_q4,
    interpolate_stiffness,
)
from .optimizer import (
    IterationRecord,
    OptimizerState,
    PgdSettings,
    RunResult,
    cg_direction,
    pgd_step,
    run_oc,
    run_pgd,
    spectral_step_size,
)
from .problems import (
    EvaluationBundle,
    Problem,
    ProblemSpec,
    com_constrained,
    eval_com_constrained,
    eval_min_compliance,
    eval_min_volume,
    eval_multi_material,
    min_compliance,
    min_volume,
    multi_material,
)
from .projection import (
    ConstraintLinearization,
    ProjectionResult,
    project,
    project_general_newton,
    project_independent,
    project_single_binary_search,
)
from .reference import reference_projection_oracle

__version__ = "0.1.0"
