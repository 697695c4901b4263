"""Optimization problem model: variable declarations, normalized constraints,
and the parameter table."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace

from .errors import BoundViolationError, DuplicateDeclarationError, UndeclaredSymbolError
from .expr import Assignment, ScalarExpr, evaluate, free_params, free_vars


class VarKind(enum.Enum):
    CONTINUOUS = "continuous"
    INTEGER = "integer"
    BINARY = "binary"


class Direction(enum.Enum):
    MINIMIZE = "minimize"
    MAXIMIZE = "maximize"


@dataclass(frozen=True)
class VarDecl:
    """One scalar decision variable. Indexed families are expanded before
    this type is constructed, so `name` may carry a bracket suffix."""

    name: str
    kind: VarKind = VarKind.CONTINUOUS
    lb: float = -math.inf
    ub: float = math.inf

    def __post_init__(self):
        if not self.name:
            raise BoundViolationError("variable name must be nonempty")
        if self.lb > self.ub:
            raise BoundViolationError(
                f"{self.name}: lower bound {self.lb} exceeds upper bound {self.ub}"
            )
        if self.kind is VarKind.BINARY and (self.lb, self.ub) != (0.0, 1.0):
            raise BoundViolationError(
                f"{self.name}: binary variables must have bounds [0, 1]"
            )

    @property
    def is_discrete(self) -> bool:
        return self.kind is not VarKind.CONTINUOUS


@dataclass(frozen=True)
class NlDescription:
    """Raw natural-language problem statement."""

    text: str

    def __post_init__(self):
        if not self.text.strip():
            raise ValueError("description must be nonempty")


@dataclass(frozen=True)
class Problem:
    """A scalar optimization problem in normalized form.

    Inequalities are stored as g(x) <= 0 and equalities as h(x) = 0; the
    parsers perform that normalization. Parameter coverage is checked by the
    consistency validator rather than here, so a problem with a dangling
    parameter reference is representable (the pipeline's repair loop exists
    for exactly that situation).
    """

    name: str
    direction: Direction
    objective: ScalarExpr
    ineq: tuple[ScalarExpr, ...] = ()
    eq: tuple[ScalarExpr, ...] = ()
    variables: tuple[VarDecl, ...] = ()
    parameters: dict[str, float] = field(default_factory=dict)

    @property
    def m(self) -> int:
        return len(self.ineq)

    @property
    def p(self) -> int:
        return len(self.eq)

    def var_names(self) -> list[str]:
        return [v.name for v in self.variables]

    def decl(self, name: str) -> VarDecl:
        for v in self.variables:
            if v.name == name:
                return v
        raise UndeclaredSymbolError(name)

    def bounds(self) -> dict[str, tuple[float, float]]:
        return {v.name: (v.lb, v.ub) for v in self.variables}

    def all_exprs(self) -> list[ScalarExpr]:
        return [self.objective, *self.ineq, *self.eq]

    def check_declarations(self) -> None:
        """Raise if a variable is referenced but not declared, or declared
        twice. Called by the parsers on their outputs."""
        declared = [v.name for v in self.variables]
        seen = set()
        for name in declared:
            if name in seen:
                raise DuplicateDeclarationError(name)
            seen.add(name)
        for e in self.all_exprs():
            for name in free_vars(e):
                if name not in seen:
                    raise UndeclaredSymbolError(name)

    def referenced_params(self) -> set[str]:
        out: set[str] = set()
        for e in self.all_exprs():
            out |= free_params(e)
        return out

    def full_assignment(self, x: Assignment) -> Assignment:
        """Variable values plus the parameter table, for evaluation."""
        merged = dict(self.parameters)
        merged.update(x)
        return Assignment(merged)

    def objective_value(self, x: Assignment) -> float:
        return evaluate(self.objective, self.full_assignment(x))

    def with_variables(self, variables: tuple[VarDecl, ...]) -> Problem:
        return replace(self, variables=variables)


def default_reference_point(pb: Problem, margin: float = 1e-6) -> Assignment:
    """Deterministic starting point inside the bound box.

    Doubly bounded variables start at the box midpoint, lower-bounded ones
    at lb + 1, everything else at 0; the result is nudged strictly inside
    finite bounds so log/sqrt barriers stay evaluable.
    """
    values: dict[str, float] = {}
    for v in pb.variables:
        lo, hi = v.lb, v.ub
        if math.isfinite(lo) and math.isfinite(hi):
            x = 0.5 * (lo + hi)
        elif math.isfinite(lo):
            x = lo + 1.0
        else:
            x = 0.0
        width = (hi - lo) if math.isfinite(hi - lo) else 1.0
        pad = margin * max(1.0, abs(width)) if math.isfinite(lo) or math.isfinite(hi) else 0.0
        if math.isfinite(lo):
            x = max(x, lo + pad)
        if math.isfinite(hi):
            x = min(x, hi - pad)
        values[v.name] = x
    return Assignment(values)
