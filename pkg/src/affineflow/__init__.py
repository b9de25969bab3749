"""Numerical toolkit for affine transform flows on the half-space cone.

Evaluates the scalar/fiber transform pair by adaptive Riccati integration,
cross-checks it against Monte Carlo characteristic functions, and implements
the moving-frame transform that removes linear drift from the free components.
"""

from .config import ConfigError, RunConfig, load_config, parse_config
from .core import Dims, Region, Tolerances, classify_region, exp_functional
from .empirical import (
    BranchContinuityError,
    EcfEstimate,
    affine_factorization_test,
    ecf,
    ecf_from_states,
    endpoint_states,
    recover_phi_psi,
    semihomogeneity_test,
)
from .flow import (
    ClosedFlowSource,
    FlowEvaluation,
    FlowGrid,
    FlowIntegrationError,
    OdeFlowSource,
    flow_on_grid,
    flow_source_for,
    matrix_exp,
    ode_flow,
)
from .models import (
    AffineModel,
    GeneratorPair,
    Path,
    RealPath,
    make_cir,
    make_heston_like,
    make_levy,
    make_nonaffine_control,
    model_from_spec,
    sample_grid,
    simulate,
)
from .movingframe import (
    FrameMatrix,
    FramePipelineError,
    FramePipelineResult,
    FrameRecursionError,
    PQState,
    build_frame,
    frame_pipeline,
    inverse_transform,
    pq_extrapolate,
    pq_recursion,
    transform_path,
    transformed_state_source,
)
from .regularity import (
    DerivativeEstimate,
    EmpiricalDerivativeEstimate,
    estimate_FR,
    estimate_FR_from_samples,
    riccati_consistency,
    u_jacobian,
)
from .verify import (
    CheckReport,
    MatrixLogError,
    TestFunction,
    check_monotonicity,
    check_property_A,
    check_semiflow,
    extract_beta,
    feller_decay,
    fit_linearity,
    posdef_certificate,
    report_to_json,
)

__version__ = "0.1.0"

__all__ = [
    "Dims",
    "Region",
    "Tolerances",
    "classify_region",
    "exp_functional",
    "FlowEvaluation",
    "FlowGrid",
    "FlowIntegrationError",
    "OdeFlowSource",
    "ClosedFlowSource",
    "ode_flow",
    "flow_on_grid",
    "flow_source_for",
    "matrix_exp",
    "AffineModel",
    "GeneratorPair",
    "Path",
    "RealPath",
    "make_levy",
    "make_cir",
    "make_heston_like",
    "make_nonaffine_control",
    "model_from_spec",
    "simulate",
    "sample_grid",
    "CheckReport",
    "MatrixLogError",
    "TestFunction",
    "check_semiflow",
    "check_monotonicity",
    "check_property_A",
    "extract_beta",
    "fit_linearity",
    "posdef_certificate",
    "feller_decay",
    "report_to_json",
    "BranchContinuityError",
    "EcfEstimate",
    "ecf",
    "ecf_from_states",
    "endpoint_states",
    "affine_factorization_test",
    "recover_phi_psi",
    "semihomogeneity_test",
    "FrameMatrix",
    "FrameRecursionError",
    "FramePipelineError",
    "FramePipelineResult",
    "PQState",
    "build_frame",
    "transform_path",
    "inverse_transform",
    "pq_recursion",
    "pq_extrapolate",
    "transformed_state_source",
    "frame_pipeline",
    "DerivativeEstimate",
    "EmpiricalDerivativeEstimate",
    "estimate_FR",
    "estimate_FR_from_samples",
    "riccati_consistency",
    "u_jacobian",
    "ConfigError",
    "RunConfig",
    "parse_config",
    "load_config",
    "__version__",
]
