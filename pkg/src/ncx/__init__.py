"""Convexification pipeline for non-convex optimization problems.

Parse problems from a small modeling DSL or canonical JSON, certify
curvature, transform non-convex components (linearization, binary
relaxation, ratio rearrangement, epigraph lifting), solve with a built-in
first-order barrier method, and wrap everything in bounded error-correction
and feasibility-correction loops.
"""

from .consistency import (
    ConsistencyReport,
    ExtractionOutcome,
    extract_from_nl,
    validate_consistency,
)
from .convexify import (
    ConvexifyPolicy,
    ConvexProblem,
    Strategy,
    TransformEntry,
    TransformRecord,
    convexify_problem,
    rearrange_ratio,
    relax_integrality,
    sca_linearize,
    select_strategy,
)
from .curvature import (
    ComponentKind,
    Curvature,
    Location,
    NonconvexComponent,
    SignContext,
    SignInfo,
    curvature_of,
    detect_nonconvex,
    sample_convexity_check,
    verify_convex,
)
from .dsl import parse_problem
from .expr import (
    Abs,
    Add,
    Assignment,
    Const,
    Div,
    Exp,
    Log,
    Log2,
    Mul,
    Neg,
    Param,
    Pow,
    ScalarExpr,
    Sqrt,
    Var,
    differentiate,
    evaluate,
    free_params,
    free_vars,
    gradient,
    simplify,
    substitute,
)
from .codegen import emit_script
from .gateway import (
    GatewayConfig,
    ModelGateway,
    PromptTemplate,
    Transcript,
    load_templates,
    render_prompt,
)
from .jsonio import emit_json, parse_json
from .metrics import (
    Corpus,
    MetricsReport,
    SweepTable,
    aggregate_rates,
    eval_corpus,
    sweep_iterations,
    time_breakdown,
)
from .pipeline import (
    ErrorClass,
    ErrorReport,
    FeasibilityReport,
    PipelineConfig,
    PipelineResult,
    RepairAction,
    check_feasibility,
    ecl_repair,
    fdc_stage1,
    fdc_stage2,
    run,
)
from .problem import (
    Direction,
    NlDescription,
    Problem,
    VarDecl,
    VarKind,
    default_reference_point,
)
from .solver import (
    BackendId,
    ScaResult,
    Solution,
    SolveOptions,
    SolveStatus,
    sca_solve,
    select_backend,
    solve,
)

__version__ = "0.1.0"
