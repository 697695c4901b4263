"""Immutable scalar expression trees with evaluation, differentiation,
substitution, and simplification."""

from __future__ import annotations

import math
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Iterator, Union

from .errors import DomainError, NonDifferentiableError, UnboundSymbolError

LN2 = math.log(2.0)

ExprLike = Union["ScalarExpr", int, float]


@dataclass(frozen=True)
class ScalarExpr:
    """Base node. Trees are finite, acyclic, and never mutated after
    construction; they are safe to share across threads."""

    def __add__(self, other: ExprLike) -> ScalarExpr:
        return Add((self, as_expr(other)))

    def __radd__(self, other: ExprLike) -> ScalarExpr:
        return Add((as_expr(other), self))

    def __sub__(self, other: ExprLike) -> ScalarExpr:
        return Add((self, Neg(as_expr(other))))

    def __rsub__(self, other: ExprLike) -> ScalarExpr:
        return Add((as_expr(other), Neg(self)))

    def __mul__(self, other: ExprLike) -> ScalarExpr:
        return Mul((self, as_expr(other)))

    def __rmul__(self, other: ExprLike) -> ScalarExpr:
        return Mul((as_expr(other), self))

    def __truediv__(self, other: ExprLike) -> ScalarExpr:
        return Div(self, as_expr(other))

    def __rtruediv__(self, other: ExprLike) -> ScalarExpr:
        return Div(as_expr(other), self)

    def __pow__(self, p: float) -> ScalarExpr:
        return Pow(self, float(p))

    def __neg__(self) -> ScalarExpr:
        return Neg(self)

    def children(self) -> tuple[ScalarExpr, ...]:
        return ()

    def walk(self) -> Iterator[ScalarExpr]:
        """Yield every node of the tree, parents before children."""
        yield self
        for child in self.children():
            yield from child.walk()


@dataclass(frozen=True)
class Const(ScalarExpr):
    value: float

    def __post_init__(self):
        object.__setattr__(self, "value", float(self.value))

    def __str__(self):
        return repr(self.value)


@dataclass(frozen=True)
class Var(ScalarExpr):
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("variable name must be nonempty")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Param(ScalarExpr):
    name: str

    def __post_init__(self):
        if not self.name:
            raise ValueError("parameter name must be nonempty")

    def __str__(self):
        return self.name


@dataclass(frozen=True)
class Add(ScalarExpr):
    terms: tuple[ScalarExpr, ...]

    def children(self):
        return self.terms

    def __str__(self):
        return "(" + " + ".join(str(t) for t in self.terms) + ")"


@dataclass(frozen=True)
class Mul(ScalarExpr):
    factors: tuple[ScalarExpr, ...]

    def children(self):
        return self.factors

    def __str__(self):
        return "(" + " * ".join(str(f) for f in self.factors) + ")"


@dataclass(frozen=True)
class Div(ScalarExpr):
    num: ScalarExpr
    den: ScalarExpr

    def __post_init__(self):
        if isinstance(self.den, Const) and self.den.value == 0.0:
            raise ValueError("division by the literal constant 0")

    def children(self):
        return (self.num, self.den)

    def __str__(self):
        return f"({self.num} / {self.den})"


@dataclass(frozen=True)
class Pow(ScalarExpr):
    base: ScalarExpr
    exponent: float

    def __post_init__(self):
        object.__setattr__(self, "exponent", float(self.exponent))

    def children(self):
        return (self.base,)

    def __str__(self):
        return f"({self.base} ^ {self.exponent!r})"


@dataclass(frozen=True)
class Neg(ScalarExpr):
    child: ScalarExpr

    def children(self):
        return (self.child,)

    def __str__(self):
        return f"(-{self.child})"


@dataclass(frozen=True)
class Log(ScalarExpr):
    child: ScalarExpr

    def children(self):
        return (self.child,)

    def __str__(self):
        return f"log({self.child})"


@dataclass(frozen=True)
class Log2(ScalarExpr):
    child: ScalarExpr

    def children(self):
        return (self.child,)

    def __str__(self):
        return f"log2({self.child})"


@dataclass(frozen=True)
class Exp(ScalarExpr):
    child: ScalarExpr

    def children(self):
        return (self.child,)

    def __str__(self):
        return f"exp({self.child})"


@dataclass(frozen=True)
class Abs(ScalarExpr):
    child: ScalarExpr

    def children(self):
        return (self.child,)

    def __str__(self):
        return f"abs({self.child})"


@dataclass(frozen=True)
class Sqrt(ScalarExpr):
    child: ScalarExpr

    def children(self):
        return (self.child,)

    def __str__(self):
        return f"sqrt({self.child})"


def as_expr(value: ExprLike) -> ScalarExpr:
    if isinstance(value, ScalarExpr):
        return value
    if isinstance(value, (int, float)):
        return Const(float(value))
    raise TypeError(f"cannot coerce {type(value).__name__} to ScalarExpr")


def sum_over(terms) -> ScalarExpr:
    """Expanded indexed sum: an Add over an already-instantiated family."""
    terms = tuple(as_expr(t) for t in terms)
    if not terms:
        return Const(0.0)
    if len(terms) == 1:
        return terms[0]
    return Add(terms)


class Assignment(Mapping):
    """Immutable map from symbol name to a finite real value."""

    __slots__ = ("_values",)

    def __init__(self, values: Mapping[str, float] | None = None, **kwargs: float):
        merged: dict[str, float] = {}
        for src in (values or {}), kwargs:
            for name, value in src.items():
                value = float(value)
                if not math.isfinite(value):
                    raise ValueError(f"non-finite value for {name!r}: {value}")
                merged[name] = value
        self._values = merged

    def __getitem__(self, name: str) -> float:
        return self._values[name]

    def __iter__(self):
        return iter(self._values)

    def __len__(self):
        return len(self._values)

    def updated(self, other: Mapping[str, float]) -> Assignment:
        merged = dict(self._values)
        merged.update(other)
        return Assignment(merged)

    def __repr__(self):
        inner = ", ".join(f"{k}={v!r}" for k, v in self._values.items())
        return f"Assignment({inner})"

    def __eq__(self, other):
        if isinstance(other, Assignment):
            return self._values == other._values
        return NotImplemented


GradientVector = dict  # name -> partial derivative value


def evaluate(expr: ScalarExpr, a: Mapping[str, float]) -> float:
    """Evaluate the tree under the assignment.

    Domain failures (log/sqrt of non-positive, division by zero, overflow)
    raise DomainError; a NaN or Inf is never returned.
    """
    if isinstance(expr, Const):
        return expr.value
    if isinstance(expr, (Var, Param)):
        try:
            return a[expr.name]
        except KeyError:
            raise UnboundSymbolError(expr.name) from None
    if isinstance(expr, Add):
        return math.fsum(evaluate(t, a) for t in expr.terms)
    if isinstance(expr, Mul):
        out = 1.0
        for f in expr.factors:
            out *= evaluate(f, a)
        _check_finite(out, expr)
        return out
    if isinstance(expr, Div):
        den = evaluate(expr.den, a)
        if den == 0.0:
            raise DomainError("division by zero", expr)
        return evaluate(expr.num, a) / den
    if isinstance(expr, Pow):
        base = evaluate(expr.base, a)
        p = expr.exponent
        try:
            out = math.pow(base, p)
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"pow({base!r}, {p!r}): {exc}", expr) from None
        _check_finite(out, expr)
        return out
    if isinstance(expr, Neg):
        return -evaluate(expr.child, a)
    if isinstance(expr, Log):
        u = evaluate(expr.child, a)
        if u <= 0.0:
            raise DomainError(f"log of non-positive value {u!r}", expr)
        return math.log(u)
    if isinstance(expr, Log2):
        u = evaluate(expr.child, a)
        if u <= 0.0:
            raise DomainError(f"log2 of non-positive value {u!r}", expr)
        return math.log2(u)
    if isinstance(expr, Exp):
        u = evaluate(expr.child, a)
        try:
            return math.exp(u)
        except OverflowError:
            raise DomainError(f"exp overflow at {u!r}", expr) from None
    if isinstance(expr, Abs):
        return abs(evaluate(expr.child, a))
    if isinstance(expr, Sqrt):
        u = evaluate(expr.child, a)
        if u < 0.0:
            raise DomainError(f"sqrt of negative value {u!r}", expr)
        return math.sqrt(u)
    raise TypeError(f"unknown node {type(expr).__name__}")


def _check_finite(value: float, node: ScalarExpr) -> None:
    if not math.isfinite(value):
        raise DomainError(f"non-finite intermediate {value!r}", node)


def _deval(expr: ScalarExpr, a: Mapping[str, float], var: str) -> tuple[float, float]:
    """Forward-mode value/derivative pair with respect to `var`.

    Abs at exactly 0 uses the subgradient-0 convention. A point where the
    value exists but the derivative blows up (sqrt at 0, fractional powers
    at 0) raises NonDifferentiableError.
    """
    if isinstance(expr, Const):
        return expr.value, 0.0
    if isinstance(expr, Var):
        try:
            return a[expr.name], 1.0 if expr.name == var else 0.0
        except KeyError:
            raise UnboundSymbolError(expr.name) from None
    if isinstance(expr, Param):
        try:
            return a[expr.name], 0.0
        except KeyError:
            raise UnboundSymbolError(expr.name) from None
    if isinstance(expr, Add):
        pairs = [_deval(t, a, var) for t in expr.terms]
        return math.fsum(v for v, _ in pairs), math.fsum(d for _, d in pairs)
    if isinstance(expr, Mul):
        pairs = [_deval(f, a, var) for f in expr.factors]
        value = 1.0
        for v, _ in pairs:
            value *= v
        deriv = 0.0
        for i, (_, di) in enumerate(pairs):
            if di == 0.0:
                continue
            rest = 1.0
            for j, (vj, _) in enumerate(pairs):
                if j != i:
                    rest *= vj
            deriv += di * rest
        _check_finite(value, expr)
        return value, deriv
    if isinstance(expr, Div):
        uv, ud = _deval(expr.num, a, var)
        vv, vd = _deval(expr.den, a, var)
        if vv == 0.0:
            raise DomainError("division by zero", expr)
        return uv / vv, (ud * vv - uv * vd) / (vv * vv)
    if isinstance(expr, Pow):
        uv, ud = _deval(expr.base, a, var)
        p = expr.exponent
        try:
            value = math.pow(uv, p)
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"pow({uv!r}, {p!r}): {exc}", expr) from None
        _check_finite(value, expr)
        if ud == 0.0 or p == 0.0:
            return value, 0.0
        if uv == 0.0 and p < 1.0:
            raise NonDifferentiableError(var, f"d/d{var} of x^{p} at 0")
        try:
            dfac = p * math.pow(uv, p - 1.0)
        except (ValueError, OverflowError) as exc:
            raise DomainError(f"pow({uv!r}, {p - 1.0!r}): {exc}", expr) from None
        return value, dfac * ud
    if isinstance(expr, Neg):
        v, d = _deval(expr.child, a, var)
        return -v, -d
    if isinstance(expr, Log):
        uv, ud = _deval(expr.child, a, var)
        if uv <= 0.0:
            raise DomainError(f"log of non-positive value {uv!r}", expr)
        return math.log(uv), ud / uv
    if isinstance(expr, Log2):
        uv, ud = _deval(expr.child, a, var)
        if uv <= 0.0:
            raise DomainError(f"log2 of non-positive value {uv!r}", expr)
        return math.log2(uv), ud / (uv * LN2)
    if isinstance(expr, Exp):
        uv, ud = _deval(expr.child, a, var)
        try:
            value = math.exp(uv)
        except OverflowError:
            raise DomainError(f"exp overflow at {uv!r}", expr) from None
        return value, value * ud
    if isinstance(expr, Abs):
        uv, ud = _deval(expr.child, a, var)
        if uv > 0.0:
            return uv, ud
        if uv < 0.0:
            return -uv, -ud
        return 0.0, 0.0
    if isinstance(expr, Sqrt):
        uv, ud = _deval(expr.child, a, var)
        if uv < 0.0:
            raise DomainError(f"sqrt of negative value {uv!r}", expr)
        if uv == 0.0:
            if ud == 0.0:
                return 0.0, 0.0
            raise NonDifferentiableError(var, f"d/d{var} of sqrt at 0")
        value = math.sqrt(uv)
        return value, ud / (2.0 * value)
    raise TypeError(f"unknown node {type(expr).__name__}")


def gradient(expr: ScalarExpr, at: Mapping[str, float], vars: set[str]) -> dict[str, float]:
    """Exact partial derivatives at a point, keyed by the requested names."""
    return {name: _deval(expr, at, name)[1] for name in sorted(vars)}


def differentiate(expr: ScalarExpr, var: str) -> ScalarExpr:
    """Symbolic derivative tree with respect to one variable.

    The Abs rule emits child/|child| as the sign factor, so the result is
    undefined at the kink; gradient() applies the subgradient-0 convention
    instead when a numeric value is needed.
    """
    if isinstance(expr, (Const, Param)):
        return Const(0.0)
    if isinstance(expr, Var):
        return Const(1.0 if expr.name == var else 0.0)
    if isinstance(expr, Add):
        return Add(tuple(differentiate(t, var) for t in expr.terms))
    if isinstance(expr, Mul):
        terms = []
        for i, f in enumerate(expr.factors):
            df = differentiate(f, var)
            others = expr.factors[:i] + expr.factors[i + 1:]
            terms.append(Mul((df,) + others))
        return Add(tuple(terms))
    if isinstance(expr, Div):
        u, v = expr.num, expr.den
        du, dv = differentiate(u, var), differentiate(v, var)
        return Div(Add((Mul((du, v)), Neg(Mul((u, dv))))), Pow(v, 2.0))
    if isinstance(expr, Pow):
        du = differentiate(expr.base, var)
        return Mul((Const(expr.exponent), Pow(expr.base, expr.exponent - 1.0), du))
    if isinstance(expr, Neg):
        return Neg(differentiate(expr.child, var))
    if isinstance(expr, Log):
        return Div(differentiate(expr.child, var), expr.child)
    if isinstance(expr, Log2):
        return Div(differentiate(expr.child, var), Mul((expr.child, Const(LN2))))
    if isinstance(expr, Exp):
        return Mul((expr, differentiate(expr.child, var)))
    if isinstance(expr, Abs):
        u = expr.child
        return Mul((Div(u, Abs(u)), differentiate(u, var)))
    if isinstance(expr, Sqrt):
        return Div(differentiate(expr.child, var), Mul((Const(2.0), Sqrt(expr.child))))
    raise TypeError(f"unknown node {type(expr).__name__}")


def substitute(expr: ScalarExpr, bindings: Mapping[str, ScalarExpr]) -> ScalarExpr:
    """Replace named symbols by expressions, all occurrences at once.

    Inserted trees are not re-scanned, so self-referential bindings such as
    x -> x+1 terminate.
    """
    if not bindings:
        return expr
    if isinstance(expr, (Var, Param)):
        return bindings.get(expr.name, expr)
    if isinstance(expr, Const):
        return expr
    if isinstance(expr, Add):
        return Add(tuple(substitute(t, bindings) for t in expr.terms))
    if isinstance(expr, Mul):
        return Mul(tuple(substitute(f, bindings) for f in expr.factors))
    if isinstance(expr, Div):
        return Div(substitute(expr.num, bindings), substitute(expr.den, bindings))
    if isinstance(expr, Pow):
        return Pow(substitute(expr.base, bindings), expr.exponent)
    if isinstance(expr, (Neg, Log, Log2, Exp, Abs, Sqrt)):
        return type(expr)(substitute(expr.child, bindings))
    raise TypeError(f"unknown node {type(expr).__name__}")


def replace_node(expr: ScalarExpr, target: ScalarExpr, replacement: ScalarExpr) -> ScalarExpr:
    """Replace every subtree structurally equal to `target`."""
    if expr == target:
        return replacement
    if isinstance(expr, (Const, Var, Param)):
        return expr
    if isinstance(expr, Add):
        return Add(tuple(replace_node(t, target, replacement) for t in expr.terms))
    if isinstance(expr, Mul):
        return Mul(tuple(replace_node(f, target, replacement) for f in expr.factors))
    if isinstance(expr, Div):
        return Div(replace_node(expr.num, target, replacement),
                   replace_node(expr.den, target, replacement))
    if isinstance(expr, Pow):
        return Pow(replace_node(expr.base, target, replacement), expr.exponent)
    if isinstance(expr, (Neg, Log, Log2, Exp, Abs, Sqrt)):
        return type(expr)(replace_node(expr.child, target, replacement))
    raise TypeError(f"unknown node {type(expr).__name__}")


def simplify(expr: ScalarExpr) -> ScalarExpr:
    """Constant folding plus +-0 and *1 identities; evaluation-equivalent."""
    if isinstance(expr, (Const, Var, Param)):
        return expr
    if isinstance(expr, Add):
        terms: list[ScalarExpr] = []
        const_sum = 0.0
        for t in expr.terms:
            t = simplify(t)
            if isinstance(t, Add):
                inner = t.terms
            else:
                inner = (t,)
            for u in inner:
                if isinstance(u, Const):
                    const_sum += u.value
                else:
                    terms.append(u)
        if const_sum != 0.0 or not terms:
            terms.insert(0, Const(const_sum))
        return terms[0] if len(terms) == 1 else Add(tuple(terms))
    if isinstance(expr, Mul):
        factors: list[ScalarExpr] = []
        const_prod = 1.0
        for f in expr.factors:
            f = simplify(f)
            if isinstance(f, Mul):
                inner = f.factors
            else:
                inner = (f,)
            for u in inner:
                if isinstance(u, Const):
                    const_prod *= u.value
                else:
                    factors.append(u)
        if const_prod == 0.0:
            return Const(0.0)
        if const_prod != 1.0 or not factors:
            factors.insert(0, Const(const_prod))
        return factors[0] if len(factors) == 1 else Mul(tuple(factors))
    if isinstance(expr, Div):
        num, den = simplify(expr.num), simplify(expr.den)
        if isinstance(den, Const):
            if den.value == 0.0:
                # Folding exposed a guaranteed division by zero; keep the
                # original denominator so the node stays constructible.
                return Div(num, expr.den)
            if isinstance(num, Const):
                return Const(num.value / den.value)
            if den.value == 1.0:
                return num
        return Div(num, den)
    if isinstance(expr, Pow):
        base = simplify(expr.base)
        if expr.exponent == 0.0:
            return Const(1.0)
        if expr.exponent == 1.0:
            return base
        if isinstance(base, Const):
            try:
                return Const(math.pow(base.value, expr.exponent))
            except (ValueError, OverflowError):
                pass
        return Pow(base, expr.exponent)
    if isinstance(expr, Neg):
        child = simplify(expr.child)
        if isinstance(child, Const):
            return Const(-child.value)
        if isinstance(child, Neg):
            return child.child
        return Neg(child)
    if isinstance(expr, (Log, Log2, Exp, Abs, Sqrt)):
        child = simplify(expr.child)
        node = type(expr)(child)
        if isinstance(child, Const):
            try:
                return Const(evaluate(node, {}))
            except DomainError:
                pass
        return node
    raise TypeError(f"unknown node {type(expr).__name__}")


def free_vars(expr: ScalarExpr) -> set[str]:
    """Names of all Var nodes reachable in the tree."""
    return {node.name for node in expr.walk() if isinstance(node, Var)}


def free_params(expr: ScalarExpr) -> set[str]:
    """Names of all Param nodes reachable in the tree."""
    return {node.name for node in expr.walk() if isinstance(node, Param)}


_COMPILE_ENV = {"math": math, "abs": abs, "fsum": math.fsum}


def _emit(expr: ScalarExpr, index: Mapping[str, int], params: Mapping[str, float]) -> str:
    if isinstance(expr, Const):
        return repr(expr.value)
    if isinstance(expr, Var):
        if expr.name in index:
            return f"x[{index[expr.name]}]"
        if expr.name in params:
            return repr(float(params[expr.name]))
        raise UnboundSymbolError(expr.name)
    if isinstance(expr, Param):
        if expr.name in params:
            return repr(float(params[expr.name]))
        if expr.name in index:
            return f"x[{index[expr.name]}]"
        raise UnboundSymbolError(expr.name)
    if isinstance(expr, Add):
        return "(" + " + ".join(_emit(t, index, params) for t in expr.terms) + ")"
    if isinstance(expr, Mul):
        return "(" + " * ".join(_emit(f, index, params) for f in expr.factors) + ")"
    if isinstance(expr, Div):
        return f"({_emit(expr.num, index, params)} / {_emit(expr.den, index, params)})"
    if isinstance(expr, Pow):
        return f"math.pow({_emit(expr.base, index, params)}, {expr.exponent!r})"
    if isinstance(expr, Neg):
        return f"(-{_emit(expr.child, index, params)})"
    if isinstance(expr, Log):
        return f"math.log({_emit(expr.child, index, params)})"
    if isinstance(expr, Log2):
        return f"math.log2({_emit(expr.child, index, params)})"
    if isinstance(expr, Exp):
        return f"math.exp({_emit(expr.child, index, params)})"
    if isinstance(expr, Abs):
        return f"abs({_emit(expr.child, index, params)})"
    if isinstance(expr, Sqrt):
        return f"math.sqrt({_emit(expr.child, index, params)})"
    raise TypeError(f"unknown node {type(expr).__name__}")


def compile_fn(expr: ScalarExpr, var_order: list[str], params: Mapping[str, float]):
    """Compile the tree into `f(x: sequence) -> float` with parameters
    baked in as literals. Domain failures surface as ValueError,
    ZeroDivisionError, or OverflowError from the math module.
    """
    index = {name: i for i, name in enumerate(var_order)}
    source = f"def _f(x):\n    return {_emit(expr, index, params)}\n"
    scope: dict = dict(_COMPILE_ENV)
    exec(source, scope)  # noqa: S102 - generated from a closed expression grammar
    return scope["_f"]
