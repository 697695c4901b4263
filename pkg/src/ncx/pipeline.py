"""End-to-end orchestration: formulate, convexify, solve, then the bounded
error-correction loop (repair and retry, at most K rounds) and the
two-stage feasibility-domain correction loop (at most L rounds: first nudge
the point along violation gradients, then re-convexify with alternative
strategies)."""

from __future__ import annotations

import enum
import json
import math
import time
from dataclasses import dataclass, field, replace

from .consistency import ConsistencyReport, extract_from_nl, validate_consistency
from .convexify import (
    ConvexifyPolicy,
    ConvexProblem,
    Strategy,
    convexify_problem,
)
from .curvature import ComponentKind, detect_nonconvex, verify_convex
from .errors import (
    ConvexificationFailedError,
    DomainError,
    ExtractionFailedError,
    GatewayError,
    NcxError,
    NonDifferentiableError,
    NoStrategyError,
    ShapeMismatchError,
    SignUncertifiableError,
    SolverInfeasibleError,
    SolverNumericalError,
    UnboundSymbolError,
    UnimplementedStrategyError,
    ZeroDirectionError,
)
from .expr import Abs, Assignment, evaluate, free_vars, gradient
from .gateway import ModelGateway, extract_fenced
from .problem import NlDescription, Problem, VarDecl, default_reference_point
from .solver import ScaResult, Solution, SolveOptions, SolveStatus, sca_solve, solve

STAGES = ("formulate", "convexify", "solve", "feasibility", "ecl", "fdc")


class ErrorClass(enum.Enum):
    PARSE_ERROR = "parse_error"
    UNBOUND_SYMBOL = "unbound_symbol"
    CONVEXIFICATION_FAILED = "convexification_failed"
    SOLVER_NUMERICAL = "solver_numerical_failure"
    SOLVER_INFEASIBLE = "solver_infeasible"
    GATEWAY_ERROR = "gateway_error"


@dataclass(frozen=True)
class ErrorReport:
    error_class: ErrorClass
    stage: str
    iteration: int
    message: str
    payload: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "class": self.error_class.value,
            "stage": self.stage,
            "iteration": self.iteration,
            "message": self.message,
            "payload": self.payload,
        }


@dataclass(frozen=True)
class RepairAction:
    kind: str  # bind_default | shrink_step | restore | resolve_sca | none
    name: str | None = None
    value: float | None = None
    note: str = ""

    @property
    def is_repair(self) -> bool:
        return self.kind != "none"

    def as_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "value": self.value,
                "note": self.note}


NO_REPAIR = RepairAction("none")


@dataclass(frozen=True)
class FeasibilityReport:
    feasible: bool
    tolerance: float
    ineq_violations: dict = field(default_factory=dict)    # index -> max(0, g)
    eq_violations: dict = field(default_factory=dict)      # index -> |h|
    bound_violations: dict = field(default_factory=dict)   # name -> overshoot
    integrality_violations: dict = field(default_factory=dict)  # name -> gap
    diagnostics: tuple[str, ...] = ()

    @property
    def i_f(self) -> int:
        return 1 if self.feasible else 0

    def worst(self) -> float:
        pools = (self.ineq_violations, self.eq_violations,
                 self.bound_violations, self.integrality_violations)
        return max((v for pool in pools for v in pool.values()), default=0.0)

    def as_dict(self) -> dict:
        return {
            "i_f": self.i_f,
            "tolerance": self.tolerance,
            "ineq": {str(k): v for k, v in self.ineq_violations.items()},
            "eq": {str(k): v for k, v in self.eq_violations.items()},
            "bounds": dict(self.bound_violations),
            "integrality": dict(self.integrality_violations),
            "diagnostics": list(self.diagnostics),
        }


def check_feasibility(pb: Problem, x: Assignment, eps: float) -> FeasibilityReport:
    """Violations of the original problem at x: inequality overshoot,
    equality residual, bound overshoot, and integrality gap for discrete
    declarations. Feasible iff everything is within eps."""
    full = pb.full_assignment(x)
    ineq_v: dict[int, float] = {}
    eq_v: dict[int, float] = {}
    bound_v: dict[str, float] = {}
    integral_v: dict[str, float] = {}
    diagnostics: list[str] = []
    evaluable = True
    for i, g in enumerate(pb.ineq):
        try:
            ineq_v[i] = max(0.0, evaluate(g, full))
        except NcxError as exc:
            evaluable = False
            diagnostics.append(f"ineq[{i}]: {exc}")
    for j, h in enumerate(pb.eq):
        try:
            eq_v[j] = abs(evaluate(h, full))
        except NcxError as exc:
            evaluable = False
            diagnostics.append(f"eq[{j}]: {exc}")
    for v in pb.variables:
        value = x.get(v.name)
        if value is None:
            evaluable = False
            diagnostics.append(f"variable {v.name!r} missing from the point")
            continue
        over = max(0.0, v.lb - value, value - v.ub)
        if over > 0.0:
            bound_v[v.name] = over
        if v.is_discrete:
            gap = abs(value - round(value))
            if gap > 0.0:
                integral_v[v.name] = gap
    worst = max(
        (v for pool in (ineq_v, eq_v, bound_v, integral_v) for v in pool.values()),
        default=0.0,
    )
    feasible = evaluable and worst <= eps
    return FeasibilityReport(feasible, eps, ineq_v, eq_v, bound_v, integral_v,
                             tuple(diagnostics))


@dataclass(frozen=True)
class PipelineConfig:
    max_ecl: int = 3               # K
    max_fdc: int = 6               # L
    feas_tol: float = 1e-6
    fdc_alphas: tuple[float, ...] | None = None  # defaults to 1/(l+1)
    disable_convexify: bool = False
    disable_ecl: bool = False
    disable_fdc: bool = False
    partial_linearization: bool = False
    solve_options: SolveOptions = field(default_factory=SolveOptions)
    gateway: ModelGateway | None = None

    def __post_init__(self):
        if self.max_ecl < 0 or self.max_fdc < 0:
            raise ValueError("iteration limits must be nonnegative")
        if self.feas_tol <= 0:
            raise ValueError("feasibility tolerance must be positive")
        if self.fdc_alphas is not None and any(
            not (0.0 < a <= 1.0) for a in self.fdc_alphas
        ):
            raise ValueError("step sizes must lie in (0, 1]")

    def alpha(self, l: int) -> float:
        if self.fdc_alphas is not None:
            return self.fdc_alphas[min(l - 1, len(self.fdc_alphas) - 1)]
        return 1.0 / (l + 1.0)


@dataclass(frozen=True)
class EclEntry:
    report: ErrorReport
    repair: RepairAction

    def as_dict(self) -> dict:
        return {"error": self.report.as_dict(), "repair": self.repair.as_dict()}


@dataclass(frozen=True)
class FdcEntry:
    stage: int  # 1 = point adjustment, 2 = re-convexification
    l: int
    note: str
    feasible_after: bool
    x0: Assignment | None = None

    def as_dict(self) -> dict:
        return {
            "stage": self.stage,
            "l": self.l,
            "note": self.note,
            "feasible_after": self.feasible_after,
            "x0": dict(self.x0) if self.x0 is not None else None,
        }


@dataclass(frozen=True)
class PipelineResult:
    success_flag: int
    execute_flag: int
    x: Assignment | None
    objective: float | None
    convex_problem: ConvexProblem | None
    solution: Solution | None
    feasibility: FeasibilityReport | None
    consistency: ConsistencyReport | None
    ecl_trace: tuple[EclEntry, ...]
    fdc_trace: tuple[FdcEntry, ...]
    timings: dict
    terminal_error: ErrorReport | None = None

    def __post_init__(self):
        if self.success_flag and not self.execute_flag:
            raise ValueError("success without execution violates flag ordering")

    def to_json_dict(self) -> dict:
        transforms = []
        if self.convex_problem is not None:
            for entry in self.convex_problem.record.entries:
                transforms.append({
                    "location": str(entry.component.location),
                    "kind": entry.component.kind.value,
                    "strategy": entry.strategy.value,
                })
        return {
            "flags": {"success": self.success_flag, "execute": self.execute_flag},
            "objective": self.objective,
            "x": dict(self.x) if self.x is not None else None,
            "timings": {k: self.timings.get(k, 0.0) for k in STAGES},
            "ecl_trace": [e.as_dict() for e in self.ecl_trace],
            "fdc_trace": [e.as_dict() for e in self.fdc_trace],
            "transforms": transforms,
            "consistency": self.consistency.as_dict() if self.consistency else None,
            "feasibility": self.feasibility.as_dict() if self.feasibility else None,
            "error": self.terminal_error.as_dict() if self.terminal_error else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_json_dict(), indent=2)


# -- error classification -----------------------------------------------------


def classify_error(exc: Exception, stage: str, iteration: int) -> ErrorReport:
    payload: dict = {}
    if isinstance(exc, UnboundSymbolError):
        cls = ErrorClass.UNBOUND_SYMBOL
        payload["name"] = exc.name
    elif isinstance(exc, (ConvexificationFailedError, NoStrategyError,
                          UnimplementedStrategyError, ShapeMismatchError,
                          SignUncertifiableError)):
        cls = ErrorClass.CONVEXIFICATION_FAILED
    elif isinstance(exc, (SolverNumericalError, DomainError, NonDifferentiableError)):
        cls = ErrorClass.SOLVER_NUMERICAL
    elif isinstance(exc, (SolverInfeasibleError, ZeroDirectionError)):
        cls = ErrorClass.SOLVER_INFEASIBLE
    elif isinstance(exc, GatewayError):
        cls = ErrorClass.GATEWAY_ERROR
    else:
        cls = ErrorClass.PARSE_ERROR
    return ErrorReport(cls, stage, iteration, str(exc), payload)


class _SolveFailed(Exception):
    """Internal: a solve returned without a point."""

    def __init__(self, status: SolveStatus):
        super().__init__(f"solver returned {status.value}")
        self.status = status


@dataclass
class _RunState:
    problem: Problem
    x0: Assignment
    opts: SolveOptions
    mode: str = "direct"  # direct | sca_partial


def ecl_repair(err: ErrorReport, state: _RunState,
               gateway: ModelGateway | None = None,
               allow_sca: bool = True) -> RepairAction:
    """Deterministic repair registry, with gateway escalation as the last
    resort. Returns NO_REPAIR when nothing applies."""
    cls = err.error_class
    if cls is ErrorClass.UNBOUND_SYMBOL and "name" in err.payload:
        return RepairAction("bind_default", name=err.payload["name"], value=1.0,
                            note="bound missing symbol to the documented default")
    if cls is ErrorClass.CONVEXIFICATION_FAILED and allow_sca:
        return RepairAction("resolve_sca",
                            note="escalate to iterated partial linearization")
    if cls is ErrorClass.SOLVER_NUMERICAL:
        return RepairAction("shrink_step", value=0.1,
                            note="shrink initial step and tighten bounds to a finite box")
    if cls is ErrorClass.SOLVER_INFEASIBLE:
        return RepairAction("restore", note="re-run with a larger restoration budget")
    if gateway is not None:
        try:
            reply = gateway.complete("repair_query", json.dumps(err.as_dict()))
            payload = extract_fenced(reply) or reply
            doc = json.loads(payload)
            kind = doc.get("action", "none")
            if kind in ("bind_default", "shrink_step", "restore", "resolve_sca"):
                return RepairAction(kind, name=doc.get("name"),
                                    value=doc.get("value"),
                                    note="suggested by gateway")
        except (GatewayError, ValueError, TypeError):
            pass
    return NO_REPAIR


def _apply_repair(action: RepairAction, state: _RunState) -> None:
    if action.kind == "bind_default":
        params = dict(state.problem.parameters)
        params[action.name] = action.value if action.value is not None else 1.0
        state.problem = replace(state.problem, parameters=params)
    elif action.kind == "shrink_step":
        factor = action.value if action.value else 0.1
        state.opts = replace(state.opts,
                             initial_step=state.opts.initial_step * factor)
        decls = []
        for v in state.problem.variables:
            lb = max(v.lb, -1e3)
            ub = min(v.ub, 1e3)
            decls.append(VarDecl(v.name, v.kind, lb, ub))
        state.problem = state.problem.with_variables(tuple(decls))
        state.x0 = default_reference_point(state.problem)
    elif action.kind == "restore":
        state.opts = replace(state.opts,
                             restore_iters=state.opts.restore_iters * 10)
        state.x0 = default_reference_point(state.problem)
    elif action.kind == "resolve_sca":
        state.mode = "sca_partial"


# -- feasibility domain correction ---------------------------------------------


def fdc_stage1(x0: Assignment, rep: FeasibilityReport, pb: Problem,
               l: int, alpha: float) -> Assignment:
    """Move the point along the negative violation-weighted gradient sum,
    scaled by the step size and clipped to the bound box."""
    if rep.feasible:
        raise ValueError("stage-1 correction requires an infeasible report")
    full = pb.full_assignment(x0)
    names = [v.name for v in pb.variables]
    delta = {name: 0.0 for name in names}
    moved = False
    for i, violation in rep.ineq_violations.items():
        if violation <= 0.0:
            continue
        g = pb.ineq[i]
        grads = gradient(g, full, free_vars(g))
        for name, partial in grads.items():
            if partial != 0.0:
                moved = True
            delta[name] -= violation * partial
    for j in rep.eq_violations:
        h = pb.eq[j]
        h_val = evaluate(h, full)
        grads = gradient(h, full, free_vars(h))
        for name, partial in grads.items():
            if partial != 0.0 and h_val != 0.0:
                moved = True
            delta[name] -= h_val * partial
    for name, overshoot in rep.bound_violations.items():
        if overshoot <= 0.0:
            continue
        decl = pb.decl(name)
        value = x0[name]
        # below the lower bound: g = lb - x, grad -1; above: g = x - ub, grad +1
        direction = 1.0 if value < decl.lb else -1.0
        delta[name] += overshoot * direction
        moved = True
    if not moved:
        raise ZeroDirectionError("all violated-constraint gradients vanish")
    adjusted = {}
    for v in pb.variables:
        value = x0[v.name] + alpha * delta[v.name]
        value = min(max(value, v.lb), v.ub)
        adjusted[v.name] = value
    return Assignment(adjusted)


def fdc_stage2(pb: Problem, x_prev: Assignment, l: int, half: int,
               opts: SolveOptions | None = None) -> ConvexProblem:
    """Alternative-strategy ladder: partial linearization first, then an
    epigraph-preferring pass where the shape applies, then a handoff to the
    full iterated linearization loop."""
    if l <= half:
        raise ValueError("stage-2 correction runs only after the midpoint")
    rung = l - half
    partial = ConvexifyPolicy(partial_linearization=True)
    if rung == 1:
        return convexify_problem(pb, x_prev, partial)
    if rung == 2:
        comps = detect_nonconvex(pb)
        overrides = {
            c.location: Strategy.EPIGRAPH_LIFT
            for c in comps
            if c.location.site == "objective" and isinstance(c.offending, Abs)
        }
        if overrides:
            return convexify_problem(
                pb, x_prev, ConvexifyPolicy(partial_linearization=True,
                                            overrides=overrides))
        return convexify_problem(pb, x_prev, partial)
    result = sca_solve(pb, opts or SolveOptions(), x_prev, partial)
    if result.convex_problem is None:
        raise ConvexificationFailedError(detect_nonconvex(pb))
    return result.convex_problem


# -- the run ---------------------------------------------------------------------


def run(task: Problem | NlDescription, cfg: PipelineConfig | None = None,
        x0: Assignment | None = None) -> PipelineResult:
    """Execute the full pipeline on a problem or a natural-language
    description; every failure mode is encoded in the result record."""
    cfg = cfg or PipelineConfig()
    timings = {k: 0.0 for k in STAGES}

    t0 = time.perf_counter()
    consistency: ConsistencyReport | None = None
    if isinstance(task, NlDescription):
        if cfg.gateway is None:
            raise ValueError("natural-language input requires a gateway")
        try:
            outcome = extract_from_nl(task, cfg.gateway)
        except (ExtractionFailedError, GatewayError) as exc:
            timings["formulate"] = time.perf_counter() - t0
            return _failed_result(classify_error(exc, "formulate", 0), timings)
        pb = outcome.problem
        consistency = outcome.report
    else:
        pb = task
        consistency = validate_consistency(pb)
    timings["formulate"] = time.perf_counter() - t0

    state = _RunState(
        problem=pb,
        x0=x0 if x0 is not None else default_reference_point(pb),
        opts=cfg.solve_options,
    )
    policy = ConvexifyPolicy(partial_linearization=cfg.partial_linearization)

    ecl_trace: list[EclEntry] = []
    pc: ConvexProblem | None = None
    sol: Solution | None = None
    max_repairs = 0 if cfg.disable_ecl else cfg.max_ecl
    attempt = 0
    terminal: ErrorReport | None = None
    while True:
        stage = "convexify"
        t_attempt = time.perf_counter()
        try:
            if state.mode == "sca_partial":
                stage = "solve"
                result = sca_solve(state.problem, state.opts, state.x0,
                                   ConvexifyPolicy(partial_linearization=True))
                pc = result.convex_problem
                sol = result.solution
                if not sol.has_point:
                    raise _SolveFailed(sol.status)
            else:
                t_cv = time.perf_counter()
                if cfg.disable_convexify:
                    if not verify_convex(state.problem):
                        raise ConvexificationFailedError(
                            detect_nonconvex(state.problem))
                    pc = ConvexProblem(state.problem, record=_empty_record(),
                                       original=state.problem, x0=state.x0)
                else:
                    pc = convexify_problem(state.problem, state.x0, policy)
                timings["convexify"] += time.perf_counter() - t_cv
                stage = "solve"
                t_sv = time.perf_counter()
                sol = solve(pc, state.x0, state.opts)
                timings["solve"] += time.perf_counter() - t_sv
                if not sol.has_point:
                    raise _SolveFailed(sol.status)
            break
        except _SolveFailed as exc:
            mapped = (SolverInfeasibleError(str(exc))
                      if exc.status is SolveStatus.INFEASIBLE
                      else SolverNumericalError(str(exc)))
            report = classify_error(mapped, stage, attempt + 1)
        except NcxError as exc:
            report = classify_error(exc, stage, attempt + 1)
        if attempt >= max_repairs:
            terminal = report
            break
        t_ecl = time.perf_counter()
        allow_sca = not cfg.disable_convexify
        action = ecl_repair(report, state,
                            gateway=None if cfg.disable_ecl else cfg.gateway,
                            allow_sca=allow_sca)
        ecl_trace.append(EclEntry(report, action))
        timings["ecl"] += time.perf_counter() - t_ecl
        if not action.is_repair:
            terminal = report
            break
        _apply_repair(action, state)
        attempt += 1

    if terminal is not None or sol is None or not sol.has_point:
        return _failed_result(terminal, timings, consistency, pc,
                              ecl_trace=tuple(ecl_trace))

    execute_flag = 1
    t_f = time.perf_counter()
    feas = check_feasibility(state.problem, sol.x, cfg.feas_tol)
    timings["feasibility"] += time.perf_counter() - t_f

    fdc_trace: list[FdcEntry] = []
    x_final = sol.x
    final_feas = feas
    if not feas.feasible and not cfg.disable_fdc and cfg.max_fdc > 0:
        t_fdc = time.perf_counter()
        x_final, final_feas, fdc_trace, pc_fdc = _run_fdc(
            state, cfg, sol.x, feas, policy)
        if pc_fdc is not None:
            pc = pc_fdc
        timings["fdc"] += time.perf_counter() - t_fdc

    success_flag = 1 if final_feas.feasible else 0
    objective = None
    try:
        objective = evaluate(state.problem.objective,
                             state.problem.full_assignment(x_final))
    except NcxError:
        pass
    return PipelineResult(
        success_flag=success_flag,
        execute_flag=execute_flag,
        x=x_final,
        objective=objective,
        convex_problem=pc,
        solution=sol,
        feasibility=final_feas,
        consistency=consistency,
        ecl_trace=tuple(ecl_trace),
        fdc_trace=tuple(fdc_trace),
        timings=timings,
    )


def _run_fdc(state: _RunState, cfg: PipelineConfig, x_start: Assignment,
             rep: FeasibilityReport, policy: ConvexifyPolicy):
    """Returns (x_final, final_report, trace, last_convex_problem)."""
    half = cfg.max_fdc // 2
    x_current = x_start
    current_rep = rep
    trace: list[FdcEntry] = []
    last_pc: ConvexProblem | None = None
    for l in range(1, cfg.max_fdc + 1):
        if l <= half:
            try:
                x_adjusted = fdc_stage1(x_current, current_rep, state.problem,
                                        l, cfg.alpha(l))
            except (ZeroDirectionError, NcxError) as exc:
                trace.append(FdcEntry(1, l, f"no step: {exc}", False))
                continue
            candidate, pc_l, note = _resolve_from(state, x_adjusted, policy)
            stage = 1
            x0_used = x_adjusted
        else:
            try:
                pc_l = fdc_stage2(state.problem, x_current, l, half, state.opts)
            except NcxError as exc:
                trace.append(FdcEntry(2, l, f"re-convexification failed: {exc}", False))
                continue
            sol_l = solve(pc_l, x_current, state.opts)
            candidate = sol_l.x
            note = f"strategies: {[s.value for s in pc_l.record.strategies()]}"
            stage = 2
            x0_used = x_current
        if pc_l is not None:
            last_pc = pc_l
        if candidate is None:
            trace.append(FdcEntry(stage, l, note + " (re-solve failed)", False,
                                  x0_used))
            continue
        cand_rep = check_feasibility(state.problem, candidate, cfg.feas_tol)
        trace.append(FdcEntry(stage, l, note, cand_rep.feasible, x0_used))
        x_current = candidate
        current_rep = cand_rep
        if cand_rep.feasible:
            return x_current, cand_rep, trace, last_pc
    return x_current, current_rep, trace, last_pc


def _resolve_from(state: _RunState, x0: Assignment, policy: ConvexifyPolicy):
    """Re-convexify at the adjusted point and solve from it."""
    try:
        pc = convexify_problem(state.problem, x0, policy)
    except NcxError as exc:
        return None, None, f"convexify failed: {exc}"
    sol = solve(pc, x0, state.opts)
    return sol.x, pc, "point adjustment"


def _empty_record():
    from .convexify import TransformRecord

    return TransformRecord()


def _failed_result(terminal: ErrorReport | None, timings: dict,
                   consistency: ConsistencyReport | None = None,
                   pc: ConvexProblem | None = None,
                   ecl_trace: tuple[EclEntry, ...] = ()) -> PipelineResult:
    return PipelineResult(
        success_flag=0,
        execute_flag=0,
        x=None,
        objective=None,
        convex_problem=pc,
        solution=None,
        feasibility=None,
        consistency=consistency,
        ecl_trace=ecl_trace,
        fdc_trace=(),
        timings=timings,
        terminal_error=terminal,
    )
