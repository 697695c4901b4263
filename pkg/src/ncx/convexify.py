"""Convexification strategies and whole-problem transformation with
provenance records."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from .curvature import (
    ComponentKind,
    Location,
    NonconvexComponent,
    SignContext,
    SignInfo,
    detect_nonconvex,
    match_ratio_threshold,
    verify_convex,
)
from .errors import (
    ConvexificationFailedError,
    NoStrategyError,
    ShapeMismatchError,
    SignUncertifiableError,
    UnimplementedStrategyError,
)
from .expr import (
    Abs,
    Add,
    Assignment,
    Const,
    Mul,
    Neg,
    ScalarExpr,
    Var,
    evaluate,
    free_vars,
    gradient,
    replace_node,
    simplify,
)
from .problem import Problem, VarDecl, VarKind


class Strategy(enum.Enum):
    SCA = "sca"
    SUBSTITUTION = "substitution"
    BINARY_RELAXATION = "binary_relaxation"
    RATIO_REARRANGE = "ratio_rearrange"
    EPIGRAPH_LIFT = "epigraph_lift"
    SDR = "sdr"
    LAGRANGIAN = "lagrangian"


#: Catalogue entries that are recognized but raise when applied. SDR and
#: Lagrangian carry no transform definition; Substitution is exposed through
#: expr.substitute for manual reformulation rather than the automatic path.
UNIMPLEMENTED_STRATEGIES = frozenset(
    {Strategy.SDR, Strategy.LAGRANGIAN, Strategy.SUBSTITUTION}
)


@dataclass(frozen=True)
class ConvexifyPolicy:
    """Knobs for convexify_problem.

    partial_linearization keeps certified subtrees and linearizes only the
    offending node; overrides force a strategy per location (SDR/Lagrangian
    still raise when applied).
    """

    partial_linearization: bool = False
    overrides: dict = field(default_factory=dict)  # Location -> Strategy

    def override_for(self, loc: Location) -> Strategy | None:
        return self.overrides.get(loc)


@dataclass(frozen=True)
class TransformEntry:
    component: NonconvexComponent
    strategy: Strategy
    before: ScalarExpr | None = None
    after: ScalarExpr | None = None
    reference: Assignment | None = None  # set on SCA entries


@dataclass(frozen=True)
class TransformRecord:
    entries: tuple[TransformEntry, ...] = ()
    reference_point: Assignment | None = None  # present iff some SCA entry exists

    def __len__(self):
        return len(self.entries)

    def strategies(self) -> list[Strategy]:
        return [e.strategy for e in self.entries]


@dataclass(frozen=True)
class ConvexProblem:
    """A certified-convex problem plus how it was obtained.

    Construction re-verifies the certificate, so every ConvexProblem in
    existence satisfies verify_convex.
    """

    problem: Problem
    record: TransformRecord
    original: Problem
    x0: Assignment | None = None  # reference point the transform was asked to use

    def __post_init__(self):
        if not verify_convex(self.problem):
            raise ConvexificationFailedError(detect_nonconvex(self.problem))


def select_strategy(comp: NonconvexComponent, pb: Problem,
                    policy: ConvexifyPolicy | None = None) -> Strategy:
    """Deterministic strategy table, with policy overrides taking precedence."""
    if policy is not None:
        forced = policy.override_for(comp.location)
        if forced is not None:
            return forced
    if comp.kind is ComponentKind.INTEGER_VARIABLE:
        return Strategy.BINARY_RELAXATION
    if comp.kind is ComponentKind.FRACTIONAL_RATIO:
        return Strategy.RATIO_REARRANGE
    if comp.location.site == "objective" and isinstance(comp.offending, Abs):
        return Strategy.EPIGRAPH_LIFT
    if comp.kind in (
        ComponentKind.BILINEAR_PRODUCT,
        ComponentKind.UNKNOWN_CURVATURE,
        ComponentKind.CONVEX_IN_MAXIMIZE,
        ComponentKind.CONCAVE_IN_MINIMIZE,
        ComponentKind.NONAFFINE_EQUALITY,
    ):
        return Strategy.SCA
    raise NoStrategyError(comp)


def sca_linearize(expr: ScalarExpr, x0: Assignment) -> ScalarExpr:
    """First-order surrogate f(x0) + grad(x0)^T (x - x0).

    The tree keeps the (x - x0) factored form, so evaluating the surrogate
    at x0 reproduces f(x0) exactly, not merely to rounding.
    """
    names = sorted(free_vars(expr))
    f0 = evaluate(expr, x0)
    grads = gradient(expr, x0, set(names))
    terms: list[ScalarExpr] = [Const(f0)]
    for name in names:
        g = grads[name]
        if g == 0.0:
            continue
        terms.append(Mul((Const(g), Add((Var(name), Neg(Const(x0[name])))))))
    if len(terms) == 1:
        return terms[0]
    return Add(tuple(terms))


def relax_integrality(pb: Problem) -> Problem:
    """Binary variables become continuous on [0, 1]; integer variables keep
    their declared bounds. Constraints are untouched."""
    changed = False
    decls: list[VarDecl] = []
    for v in pb.variables:
        if v.kind is VarKind.BINARY:
            decls.append(VarDecl(v.name, VarKind.CONTINUOUS, 0.0, 1.0))
            changed = True
        elif v.kind is VarKind.INTEGER:
            decls.append(VarDecl(v.name, VarKind.CONTINUOUS, v.lb, v.ub))
            changed = True
        else:
            decls.append(v)
    if not changed:
        return pb
    return pb.with_variables(tuple(decls))


def rearrange_ratio(g: ScalarExpr, ctx: SignContext) -> ScalarExpr:
    """Multiply a ratio-threshold constraint through by its positive
    denominator: offset + c*num/den <= 0 becomes offset*den + c*num <= 0."""
    shape = match_ratio_threshold(g, ctx)
    if shape is None:
        raise ShapeMismatchError(f"not a ratio-threshold constraint: {g}")
    if ctx.sign(shape.den) is not SignInfo.POSITIVE:
        raise SignUncertifiableError(
            f"denominator sign is {ctx.sign(shape.den).value}, need positive: {shape.den}"
        )
    out = Add((
        Mul((Const(shape.offset), shape.den)),
        Mul((Const(shape.coef), shape.num)),
    ))
    return simplify(out)


def _fresh_var_name(base: str, taken: set[str]) -> str:
    name = base
    k = 1
    while name in taken:
        k += 1
        name = f"{base}{k}"
    return name


def _apply_epigraph(pb: Problem, offending: ScalarExpr) -> tuple[Problem, ScalarExpr]:
    """Lift one |u| occurrence in the objective to a fresh variable t with
    u <= t and -u <= t."""
    if not isinstance(offending, Abs):
        raise ShapeMismatchError("epigraph lift applies to an abs-valued subterm")
    taken = set(pb.var_names())
    tname = _fresh_var_name("t_abs", taken)
    tvar = Var(tname)
    new_obj = replace_node(pb.objective, offending, tvar)
    u = offending.child
    new_ineq = pb.ineq + (
        Add((u, Neg(tvar))),
        Add((Neg(u), Neg(tvar))),
    )
    new_decls = pb.variables + (VarDecl(tname, VarKind.CONTINUOUS, 0.0, math.inf),)
    return replace(pb, objective=new_obj, ineq=new_ineq, variables=new_decls), tvar


def convexify_problem(pb: Problem, x0: Assignment,
                      policy: ConvexifyPolicy | None = None) -> ConvexProblem:
    """Detect components, apply one strategy each in deterministic order
    (variables, then constraints by index, then the objective), and return
    the certified result with its provenance record.
    """
    policy = policy or ConvexifyPolicy()
    comps = detect_nonconvex(pb)
    if not comps:
        return ConvexProblem(pb, TransformRecord(), pb, x0)

    ctx = SignContext.for_problem(pb)
    full_x0 = pb.full_assignment(x0)
    entries: list[TransformEntry] = []
    current = pb

    def ordering(comp: NonconvexComponent) -> tuple:
        site_rank = {"var": 0, "ineq": 1, "eq": 2, "objective": 3}[comp.location.site]
        return (site_rank, comp.location.index or 0, comp.location.name or "")

    used_sca = False
    for comp in sorted(comps, key=ordering):
        strategy = select_strategy(comp, pb, policy)
        if strategy in UNIMPLEMENTED_STRATEGIES:
            raise UnimplementedStrategyError(strategy)
        loc = comp.location
        if strategy is Strategy.BINARY_RELAXATION:
            current = relax_integrality_one(current, loc.name)
            entries.append(TransformEntry(comp, strategy))
            continue
        if loc.site == "ineq":
            before = current.ineq[loc.index]
            after = _transform_expr(before, comp, strategy, ctx, full_x0, policy)
            new_ineq = list(current.ineq)
            new_ineq[loc.index] = after
            current = replace(current, ineq=tuple(new_ineq))
        elif loc.site == "eq":
            before = current.eq[loc.index]
            after = _transform_expr(before, comp, strategy, ctx, full_x0, policy)
            new_eq = list(current.eq)
            new_eq[loc.index] = after
            current = replace(current, eq=tuple(new_eq))
        elif loc.site == "objective":
            before = current.objective
            if strategy is Strategy.EPIGRAPH_LIFT:
                current, _ = _apply_epigraph(current, comp.offending)
                after = current.objective
            else:
                after = _transform_expr(before, comp, strategy, ctx, full_x0, policy)
                current = replace(current, objective=after)
        else:
            raise NoStrategyError(comp)
        reference = x0 if strategy is Strategy.SCA else None
        used_sca = used_sca or strategy is Strategy.SCA
        entries.append(TransformEntry(comp, strategy, before, after, reference))

    record = TransformRecord(tuple(entries), x0 if used_sca else None)
    return ConvexProblem(current, record, pb, x0)


def relax_integrality_one(pb: Problem, name: str) -> Problem:
    decls = []
    for v in pb.variables:
        if v.name == name and v.is_discrete:
            lb, ub = (0.0, 1.0) if v.kind is VarKind.BINARY else (v.lb, v.ub)
            decls.append(VarDecl(v.name, VarKind.CONTINUOUS, lb, ub))
        else:
            decls.append(v)
    return pb.with_variables(tuple(decls))


def _transform_expr(expr: ScalarExpr, comp: NonconvexComponent, strategy: Strategy,
                    ctx: SignContext, x0: Assignment,
                    policy: ConvexifyPolicy) -> ScalarExpr:
    if strategy is Strategy.RATIO_REARRANGE:
        return rearrange_ratio(expr, ctx)
    if strategy is Strategy.SCA:
        if policy.partial_linearization and comp.offending is not None \
                and comp.offending != expr:
            linearized = sca_linearize(comp.offending, x0)
            return replace_node(expr, comp.offending, linearized)
        return sca_linearize(expr, x0)
    if strategy is Strategy.EPIGRAPH_LIFT:
        raise ShapeMismatchError("epigraph lift applies only to the objective")
    raise UnimplementedStrategyError(strategy)
