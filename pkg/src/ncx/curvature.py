"""Curvature certification and non-convex component detection.

The rules are compositional and sound: a Convex/Concave verdict is a
certificate valid on the declared domain, while Unknown only means
"not certified", never "certified non-convex".
"""

from __future__ import annotations

import enum
import math
import random
from dataclasses import dataclass

from .errors import DomainError
from .expr import (
    Abs,
    Add,
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
    compile_fn,
)
from .problem import Direction, Problem

_INF = math.inf


class Curvature(enum.Enum):
    CONSTANT = "constant"
    AFFINE = "affine"
    CONVEX = "convex"
    CONCAVE = "concave"
    UNKNOWN = "unknown"

    @property
    def is_convex(self) -> bool:
        return self in (Curvature.CONSTANT, Curvature.AFFINE, Curvature.CONVEX)

    @property
    def is_concave(self) -> bool:
        return self in (Curvature.CONSTANT, Curvature.AFFINE, Curvature.CONCAVE)

    @property
    def is_affine(self) -> bool:
        return self in (Curvature.CONSTANT, Curvature.AFFINE)

    def negated(self) -> Curvature:
        if self is Curvature.CONVEX:
            return Curvature.CONCAVE
        if self is Curvature.CONCAVE:
            return Curvature.CONVEX
        return self


class SignInfo(enum.Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NONNEG = "nonneg"
    NONPOS = "nonpos"
    UNKNOWN = "unknown"

    @property
    def is_nonneg(self) -> bool:
        return self in (SignInfo.POSITIVE, SignInfo.NONNEG)

    @property
    def is_nonpos(self) -> bool:
        return self in (SignInfo.NEGATIVE, SignInfo.NONPOS)


def _add_curv(a: Curvature, b: Curvature) -> Curvature:
    if a is Curvature.CONSTANT:
        return b
    if b is Curvature.CONSTANT:
        return a
    if a.is_affine and b.is_affine:
        return Curvature.AFFINE
    if a.is_convex and b.is_convex:
        return Curvature.CONVEX
    if a.is_concave and b.is_concave:
        return Curvature.CONCAVE
    return Curvature.UNKNOWN


def _imul(a: float, b: float) -> float:
    # 0 * inf arises from unbounded interval endpoints; 0 is the tight choice
    # for bound candidates.
    if a == 0.0 or b == 0.0:
        return 0.0
    return a * b


class SignContext:
    """Interval and sign analysis from variable bounds and parameter values.

    Parameters without a table entry get the unbounded interval, which keeps
    every verdict conservative.
    """

    def __init__(self, bounds: dict[str, tuple[float, float]] | None = None,
                 params: dict[str, float] | None = None):
        self.bounds = dict(bounds or {})
        self.params = dict(params or {})

    @classmethod
    def for_problem(cls, pb: Problem) -> SignContext:
        return cls(pb.bounds(), pb.parameters)

    def interval(self, expr: ScalarExpr) -> tuple[float, float]:
        if isinstance(expr, Const):
            return expr.value, expr.value
        if isinstance(expr, Var):
            if expr.name in self.bounds:
                return self.bounds[expr.name]
            if expr.name in self.params:
                v = self.params[expr.name]
                return v, v
            return -_INF, _INF
        if isinstance(expr, Param):
            if expr.name in self.params:
                v = self.params[expr.name]
                return v, v
            return -_INF, _INF
        if isinstance(expr, Add):
            lo = hi = 0.0
            for t in expr.terms:
                tlo, thi = self.interval(t)
                lo += tlo
                hi += thi
            return lo, hi
        if isinstance(expr, Neg):
            lo, hi = self.interval(expr.child)
            return -hi, -lo
        if isinstance(expr, Mul):
            lo, hi = 1.0, 1.0
            for f in expr.factors:
                flo, fhi = self.interval(f)
                cands = (_imul(lo, flo), _imul(lo, fhi), _imul(hi, flo), _imul(hi, fhi))
                lo, hi = min(cands), max(cands)
            return lo, hi
        if isinstance(expr, Div):
            dlo, dhi = self.interval(expr.den)
            if dlo <= 0.0 <= dhi:
                return -_INF, _INF
            ilo, ihi = (1.0 / dhi if math.isfinite(dhi) else 0.0,
                        1.0 / dlo if math.isfinite(dlo) else 0.0)
            nlo, nhi = self.interval(expr.num)
            cands = (_imul(nlo, ilo), _imul(nlo, ihi), _imul(nhi, ilo), _imul(nhi, ihi))
            return min(cands), max(cands)
        if isinstance(expr, Pow):
            blo, bhi = self.interval(expr.base)
            p = expr.exponent
            if p == 0.0:
                return 1.0, 1.0
            if p == int(p) and p > 0:
                n = int(p)
                a, b = _ipow(blo, n), _ipow(bhi, n)
                lo, hi = min(a, b), max(a, b)
                if n % 2 == 0 and blo <= 0.0 <= bhi:
                    lo = 0.0
                return lo, hi
            # fractional or negative exponents: only certify on a positive base
            if blo > 0.0:
                a, b = _spow(blo, p), _spow(bhi, p)
                return min(a, b), max(a, b)
            return -_INF, _INF
        if isinstance(expr, Log):
            lo, hi = self._log_interval(expr.child, math.log)
            return lo, hi
        if isinstance(expr, Log2):
            return self._log_interval(expr.child, math.log2)
        if isinstance(expr, Exp):
            lo, hi = self.interval(expr.child)
            return _sexp(lo), _sexp(hi)
        if isinstance(expr, Abs):
            lo, hi = self.interval(expr.child)
            if lo >= 0.0:
                return lo, hi
            if hi <= 0.0:
                return -hi, -lo
            return 0.0, max(-lo, hi)
        if isinstance(expr, Sqrt):
            lo, hi = self.interval(expr.child)
            if hi < 0.0:
                return -_INF, _INF
            return math.sqrt(max(lo, 0.0)), math.sqrt(hi) if math.isfinite(hi) else _INF
        raise TypeError(f"unknown node {type(expr).__name__}")

    def _log_interval(self, child: ScalarExpr, fn) -> tuple[float, float]:
        lo, hi = self.interval(child)
        if hi <= 0.0:
            return -_INF, _INF
        upper = fn(hi) if math.isfinite(hi) else _INF
        lower = fn(lo) if lo > 0.0 else -_INF
        return lower, upper

    def sign(self, expr: ScalarExpr) -> SignInfo:
        lo, hi = self.interval(expr)
        if lo > 0.0:
            return SignInfo.POSITIVE
        if hi < 0.0:
            return SignInfo.NEGATIVE
        if lo >= 0.0:
            return SignInfo.NONNEG
        if hi <= 0.0:
            return SignInfo.NONPOS
        return SignInfo.UNKNOWN

    def const_value(self, expr: ScalarExpr) -> float | None:
        """Numeric value when the expression is a fixed constant, else None."""
        lo, hi = self.interval(expr)
        if lo == hi and math.isfinite(lo):
            return lo
        return None


def _ipow(x: float, n: int) -> float:
    if math.isinf(x):
        if n % 2 == 0:
            return _INF
        return x
    return x ** n


def _spow(x: float, p: float) -> float:
    if math.isinf(x):
        return _INF if p > 0 else 0.0
    try:
        return math.pow(x, p)
    except (ValueError, OverflowError):
        return _INF


def _sexp(x: float) -> float:
    if x == -_INF:
        return 0.0
    if x == _INF:
        return _INF
    try:
        return math.exp(x)
    except OverflowError:
        return _INF


def curvature_of(expr: ScalarExpr, ctx: SignContext | None = None) -> Curvature:
    """Certify the curvature of an expression under the context's bounds."""
    ctx = ctx or SignContext()
    return _curv(expr, ctx)


def _curv(expr: ScalarExpr, ctx: SignContext) -> Curvature:
    if isinstance(expr, (Const, Param)):
        return Curvature.CONSTANT
    if isinstance(expr, Var):
        return Curvature.AFFINE
    if isinstance(expr, Add):
        out = Curvature.CONSTANT
        for t in expr.terms:
            out = _add_curv(out, _curv(t, ctx))
            if out is Curvature.UNKNOWN:
                return out
        return out
    if isinstance(expr, Neg):
        return _curv(expr.child, ctx).negated()
    if isinstance(expr, Mul):
        nonconst: list[ScalarExpr] = []
        const_factors: list[ScalarExpr] = []
        for f in expr.factors:
            if _curv(f, ctx) is Curvature.CONSTANT:
                const_factors.append(f)
            else:
                nonconst.append(f)
        if not nonconst:
            return Curvature.CONSTANT
        if len(nonconst) > 1:
            return Curvature.UNKNOWN
        inner = _curv(nonconst[0], ctx)
        if not const_factors:
            return inner
        coeff = Mul(tuple(const_factors)) if len(const_factors) > 1 else const_factors[0]
        sign = ctx.sign(coeff)
        if inner.is_affine:
            return Curvature.AFFINE
        if sign.is_nonneg:
            return inner
        if sign.is_nonpos:
            return inner.negated()
        return Curvature.UNKNOWN
    if isinstance(expr, Div):
        if _curv(expr.den, ctx) is not Curvature.CONSTANT:
            return Curvature.UNKNOWN
        num = _curv(expr.num, ctx)
        if num is Curvature.CONSTANT:
            return Curvature.CONSTANT
        if num.is_affine:
            return Curvature.AFFINE
        sign = ctx.sign(expr.den)
        # a nonneg/nonpos constant denominator is strictly signed wherever
        # the expression evaluates at all
        if sign.is_nonneg:
            return num
        if sign.is_nonpos:
            return num.negated()
        return Curvature.UNKNOWN
    if isinstance(expr, Pow):
        p = expr.exponent
        base = _curv(expr.base, ctx)
        if base is Curvature.CONSTANT:
            return Curvature.CONSTANT
        if p == 0.0:
            return Curvature.CONSTANT
        if p == 1.0:
            return base
        sign = ctx.sign(expr.base)
        if p == int(p) and p > 1:
            n = int(p)
            if n % 2 == 0:
                if base.is_affine:
                    return Curvature.CONVEX
                if base is Curvature.CONVEX and sign.is_nonneg:
                    return Curvature.CONVEX
                if base is Curvature.CONCAVE and sign.is_nonpos:
                    return Curvature.CONVEX
                return Curvature.UNKNOWN
            if base.is_convex and sign.is_nonneg:
                return Curvature.CONVEX
            if base.is_concave and sign.is_nonpos:
                return Curvature.CONCAVE
            return Curvature.UNKNOWN
        if 0.0 < p < 1.0:
            if base.is_concave and sign.is_nonneg:
                return Curvature.CONCAVE
            return Curvature.UNKNOWN
        if p > 1.0:
            if base.is_convex and sign.is_nonneg:
                return Curvature.CONVEX
            return Curvature.UNKNOWN
        # p < 0: x^p is convex decreasing on x > 0
        if base.is_concave and sign.is_nonneg:
            return Curvature.CONVEX
        if base.is_affine and sign.is_nonpos and p == int(p):
            return Curvature.CONVEX if int(p) % 2 == 0 else Curvature.CONCAVE
        return Curvature.UNKNOWN
    if isinstance(expr, (Log, Log2)):
        child = _curv(expr.child, ctx)
        if child.is_concave:
            return Curvature.CONCAVE
        return Curvature.UNKNOWN
    if isinstance(expr, Exp):
        child = _curv(expr.child, ctx)
        if child.is_convex:
            return Curvature.CONVEX
        return Curvature.UNKNOWN
    if isinstance(expr, Sqrt):
        child = _curv(expr.child, ctx)
        if child.is_concave:
            return Curvature.CONCAVE
        return Curvature.UNKNOWN
    if isinstance(expr, Abs):
        child = _curv(expr.child, ctx)
        if child is Curvature.CONSTANT:
            return Curvature.CONSTANT
        if child.is_affine:
            return Curvature.CONVEX
        sign = ctx.sign(expr.child)
        if child is Curvature.CONVEX and sign.is_nonneg:
            return Curvature.CONVEX
        if child is Curvature.CONCAVE and sign.is_nonpos:
            return Curvature.CONVEX
        return Curvature.UNKNOWN
    raise TypeError(f"unknown node {type(expr).__name__}")


class ComponentKind(enum.Enum):
    BILINEAR_PRODUCT = "bilinear_product"
    FRACTIONAL_RATIO = "fractional_ratio"
    CONCAVE_IN_MINIMIZE = "concave_in_minimize"
    CONVEX_IN_MAXIMIZE = "convex_in_maximize"
    NONAFFINE_EQUALITY = "nonaffine_equality"
    INTEGER_VARIABLE = "integer_variable"
    UNKNOWN_CURVATURE = "unknown_curvature"


@dataclass(frozen=True)
class Location:
    site: str  # "objective" | "ineq" | "eq" | "var"
    index: int | None = None
    name: str | None = None

    def __str__(self):
        if self.site == "var":
            return f"var {self.name}"
        if self.index is None:
            return self.site
        return f"{self.site}[{self.index}]"


@dataclass(frozen=True)
class NonconvexComponent:
    location: Location
    kind: ComponentKind
    offending: ScalarExpr | None = None

    def __str__(self):
        return f"{self.kind.value} at {self.location}"


def _is_bilinear_mul(node: ScalarExpr, ctx: SignContext) -> bool:
    if not isinstance(node, Mul):
        return False
    nonconst = sum(1 for f in node.factors if _curv(f, ctx) is not Curvature.CONSTANT)
    return nonconst >= 2


def decompose_affine_combination(expr: ScalarExpr, ctx: SignContext):
    """Split an expression into constant offset plus coefficient-weighted
    non-constant atoms, traversing only Add, Neg, and multiplication by
    constants. Returns (offset, [(coef, atom), ...])."""
    offset = 0.0
    terms: list[tuple[float, ScalarExpr]] = []

    def visit(node: ScalarExpr, coef: float) -> None:
        nonlocal offset
        value = ctx.const_value(node)
        if value is not None:
            offset += coef * value
            return
        if isinstance(node, Add):
            for t in node.terms:
                visit(t, coef)
            return
        if isinstance(node, Neg):
            visit(node.child, -coef)
            return
        if isinstance(node, Mul):
            const_part = 1.0
            rest: list[ScalarExpr] = []
            for f in node.factors:
                fv = ctx.const_value(f)
                if fv is None:
                    rest.append(f)
                else:
                    const_part *= fv
            if len(rest) == 1:
                visit(rest[0], coef * const_part)
                return
        terms.append((coef, node))

    visit(expr, 1.0)
    return offset, terms


@dataclass(frozen=True)
class RatioShape:
    """g <= 0 of the form offset + coef * num/den <= 0 with nothing else."""

    offset: float
    coef: float
    num: ScalarExpr
    den: ScalarExpr
    div_node: ScalarExpr


def match_ratio_threshold(g: ScalarExpr, ctx: SignContext) -> RatioShape | None:
    offset, terms = decompose_affine_combination(g, ctx)
    if len(terms) != 1:
        return None
    coef, atom = terms[0]
    if not isinstance(atom, Div) or coef == 0.0:
        return None
    if not _curv(atom.num, ctx).is_affine or not _curv(atom.den, ctx).is_affine:
        return None
    return RatioShape(offset, coef, atom.num, atom.den, atom)


def _classify_expr(expr: ScalarExpr, ctx: SignContext, curv: Curvature,
                   in_constraint: bool) -> tuple[ComponentKind, ScalarExpr]:
    if in_constraint:
        shape = match_ratio_threshold(expr, ctx)
        if shape is not None and ctx.sign(shape.den) is SignInfo.POSITIVE:
            return ComponentKind.FRACTIONAL_RATIO, shape.div_node
    for node in expr.walk():
        if _is_bilinear_mul(node, ctx):
            return ComponentKind.BILINEAR_PRODUCT, node
    if not in_constraint:
        for node in expr.walk():
            if isinstance(node, Abs) and not _curv(node.child, ctx).is_affine:
                return ComponentKind.UNKNOWN_CURVATURE, node
    return ComponentKind.UNKNOWN_CURVATURE, expr


def detect_nonconvex(pb: Problem) -> list[NonconvexComponent]:
    """All components standing between the problem and a convex certificate.

    The list is empty exactly when verify_convex accepts the problem.
    """
    ctx = SignContext.for_problem(pb)
    components: list[NonconvexComponent] = []
    for v in pb.variables:
        if v.is_discrete:
            components.append(NonconvexComponent(
                Location("var", name=v.name), ComponentKind.INTEGER_VARIABLE, Var(v.name)))
    for i, g in enumerate(pb.ineq):
        c = _curv(g, ctx)
        if c.is_convex:
            continue
        if c is Curvature.CONCAVE:
            components.append(NonconvexComponent(
                Location("ineq", i), ComponentKind.CONCAVE_IN_MINIMIZE, g))
        else:
            kind, node = _classify_expr(g, ctx, c, in_constraint=True)
            components.append(NonconvexComponent(Location("ineq", i), kind, node))
    for j, h in enumerate(pb.eq):
        if not _curv(h, ctx).is_affine:
            components.append(NonconvexComponent(
                Location("eq", j), ComponentKind.NONAFFINE_EQUALITY, h))
    c = _curv(pb.objective, ctx)
    if pb.direction is Direction.MINIMIZE:
        ok = c.is_convex
        flipped_kind = ComponentKind.CONCAVE_IN_MINIMIZE
        flipped = c is Curvature.CONCAVE
    else:
        ok = c.is_concave
        flipped_kind = ComponentKind.CONVEX_IN_MAXIMIZE
        flipped = c is Curvature.CONVEX
    if not ok:
        if flipped:
            components.append(NonconvexComponent(
                Location("objective"), flipped_kind, pb.objective))
        else:
            kind, node = _classify_expr(pb.objective, ctx, c, in_constraint=False)
            components.append(NonconvexComponent(Location("objective"), kind, node))
    return components


def verify_convex(pb: Problem) -> bool:
    """True iff the problem is certified solvable by a convex method:
    direction-compatible objective, convex inequalities, affine equalities,
    continuous variables."""
    if any(v.is_discrete for v in pb.variables):
        return False
    ctx = SignContext.for_problem(pb)
    c = _curv(pb.objective, ctx)
    if pb.direction is Direction.MINIMIZE and not c.is_convex:
        return False
    if pb.direction is Direction.MAXIMIZE and not c.is_concave:
        return False
    if any(not _curv(g, ctx).is_convex for g in pb.ineq):
        return False
    if any(not _curv(h, ctx).is_affine for h in pb.eq):
        return False
    return True


@dataclass(frozen=True)
class ConvexityVerdict:
    ok: bool
    x: dict[str, float] | None = None
    y: dict[str, float] | None = None
    lam: float | None = None
    gap: float | None = None


def sample_convexity_check(expr: ScalarExpr, box: dict[str, tuple[float, float]],
                           samples: int, seed: int,
                           params: dict[str, float] | None = None,
                           tol: float = 1e-9) -> ConvexityVerdict:
    """Empirical midpoint-convexity search: draw point pairs and a mixing
    weight, report the first violation of the convexity inequality."""
    rng = random.Random(seed)
    names = sorted(box)
    for lo, hi in box.values():
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise ValueError("sample box must be bounded")
    fn = compile_fn(expr, names, params or {})

    def call(point: list[float]) -> float:
        try:
            return fn(point)
        except (ValueError, ZeroDivisionError, OverflowError) as exc:
            raise DomainError(str(exc)) from None

    for _ in range(samples):
        x = [rng.uniform(*box[n]) for n in names]
        y = [rng.uniform(*box[n]) for n in names]
        lam = rng.uniform(0.0, 1.0)
        mid = [lam * a + (1.0 - lam) * b for a, b in zip(x, y)]
        lhs = call(mid)
        rhs = lam * call(x) + (1.0 - lam) * call(y)
        if lhs > rhs + tol:
            return ConvexityVerdict(False, dict(zip(names, x)), dict(zip(names, y)),
                                    lam, lhs - rhs)
    return ConvexityVerdict(True)
