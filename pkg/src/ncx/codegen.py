"""Solver-script emission for external ecosystems.

The emitted text is a deterministic artifact: variables appear in
declaration order, parameters inline as literals, and the output is plain
UTF-8 with LF line endings. Nothing here is ever executed by this package.
"""

from __future__ import annotations

import math

from .convexify import ConvexProblem
from .errors import UnsupportedAtomError, UnsupportedBackendError
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
)
from .problem import Direction, Problem
from .solver import BackendId

SCRIPT_BACKENDS = ("scipy", "cvxpy", "gurobi")


def _render(expr: ScalarExpr, sym: dict[str, str], params: dict[str, float],
            backend: str, fns: dict[str, str]) -> str:
    def go(node: ScalarExpr) -> str:
        if isinstance(node, Const):
            return repr(node.value)
        if isinstance(node, Var):
            return sym[node.name]
        if isinstance(node, Param):
            if node.name in params:
                return repr(params[node.name])
            return sym.get(node.name, node.name)
        if isinstance(node, Add):
            return "(" + " + ".join(go(t) for t in node.terms) + ")"
        if isinstance(node, Mul):
            return "(" + " * ".join(go(f) for f in node.factors) + ")"
        if isinstance(node, Neg):
            return f"(-{go(node.child)})"
        if isinstance(node, Div):
            return f"({go(node.num)} / {go(node.den)})"
        if isinstance(node, Pow):
            if backend == "gurobi" and node.exponent not in (1.0, 2.0):
                raise UnsupportedAtomError(backend, f"pow^{node.exponent}")
            if "pow" in fns:
                return f"{fns['pow']}({go(node.base)}, {node.exponent!r})"
            return f"({go(node.base)} ** {node.exponent!r})"
        for kind, cls in (("log", Log), ("log2", Log2), ("exp", Exp),
                          ("abs", Abs), ("sqrt", Sqrt)):
            if isinstance(node, cls):
                fn = fns.get(kind)
                if fn is None:
                    raise UnsupportedAtomError(backend, kind)
                return fn.format(arg=go(node.child))
        raise UnsupportedAtomError(backend, type(node).__name__)

    return go(expr)


def emit_script(pc: ConvexProblem, backend: BackendId) -> str:
    """Render the convex problem as a solve-and-print script for the named
    external backend."""
    if not backend.is_script:
        raise UnsupportedBackendError(str(backend))
    name = backend.script_name
    if name == "scipy":
        return _emit_scipy(pc.problem)
    if name == "cvxpy":
        return _emit_cvxpy(pc.problem)
    if name == "gurobi":
        return _emit_gurobi(pc.problem)
    raise UnsupportedBackendError(str(backend))


_SCIPY_FNS = {
    "log": "np.log({arg})",
    "log2": "np.log2({arg})",
    "exp": "np.exp({arg})",
    "abs": "np.abs({arg})",
    "sqrt": "np.sqrt({arg})",
    "pow": "np.power",
}


def _emit_scipy(pb: Problem) -> str:
    names = pb.var_names()
    sym = {v: f"x[{i}]" for i, v in enumerate(names)}
    params = pb.parameters
    lines = [
        "import numpy as np",
        "from scipy.optimize import minimize",
        "",
        f"# problem: {pb.name}",
    ]
    sense = -1.0 if pb.direction is Direction.MAXIMIZE else 1.0
    obj_src = _render(pb.objective, sym, params, "scipy", _SCIPY_FNS)
    lines += [
        "",
        "def objective(x):",
        (f"    return -({obj_src})" if sense < 0 else f"    return {obj_src}"),
    ]
    for i, g in enumerate(pb.ineq):
        body = _render(g, sym, params, "scipy", _SCIPY_FNS)
        lines += [
            "",
            f"def constraint_ineq_{i}(x):",
            f"    # nonnegative when satisfied: -(g_{i}) with g_{i} <= 0",
            f"    return -({body})",
        ]
    for j, h in enumerate(pb.eq):
        body = _render(h, sym, params, "scipy", _SCIPY_FNS)
        lines += [
            "",
            f"def constraint_eq_{j}(x):",
            f"    return {body}",
        ]
    bounds = []
    for v in pb.variables:
        lo = "None" if math.isinf(v.lb) else repr(v.lb)
        hi = "None" if math.isinf(v.ub) else repr(v.ub)
        bounds.append(f"({lo}, {hi})")
    lines += [
        "",
        f"x0 = np.array({[_mid(v.lb, v.ub) for v in pb.variables]!r})",
        f"bounds = [{', '.join(bounds)}]",
    ]
    if pb.ineq or pb.eq:
        constr = ", ".join(
            [f"{{'type': 'ineq', 'fun': constraint_ineq_{i}}}" for i in range(len(pb.ineq))]
            + [f"{{'type': 'eq', 'fun': constraint_eq_{j}}}" for j in range(len(pb.eq))]
        )
        lines.append(f"constraints = [{constr}]")
        solve_args = "objective, x0, bounds=bounds, constraints=constraints"
    else:
        solve_args = "objective, x0, bounds=bounds"
    value_expr = "-result.fun" if sense < 0 else "result.fun"
    lines += [
        "",
        f"result = minimize({solve_args})",
        "",
        'print("Objective Function Value:", ' + value_expr + ")",
        'print("Optimized Variables:", result.x)',
    ]
    return "\n".join(lines) + "\n"


_CVXPY_FNS = {
    "log": "cp.log({arg})",
    "log2": "(cp.log({arg}) / 0.6931471805599453)",
    "exp": "cp.exp({arg})",
    "abs": "cp.abs({arg})",
    "sqrt": "cp.sqrt({arg})",
    "pow": "cp.power",
}


def _emit_cvxpy(pb: Problem) -> str:
    names = pb.var_names()
    sym = {v: f"v{i}" for i, v in enumerate(names)}
    params = pb.parameters
    lines = ["import cvxpy as cp", "", f"# problem: {pb.name}", ""]
    for i, v in enumerate(pb.variables):
        lines.append(f"v{i} = cp.Variable(name={v.name!r})")
    obj_src = _render(pb.objective, sym, params, "cvxpy", _CVXPY_FNS)
    direction = "Maximize" if pb.direction is Direction.MAXIMIZE else "Minimize"
    lines += ["", f"objective = cp.{direction}({obj_src})"]
    constraints = []
    for g in pb.ineq:
        constraints.append(f"{_render(g, sym, params, 'cvxpy', _CVXPY_FNS)} <= 0")
    for h in pb.eq:
        constraints.append(f"{_render(h, sym, params, 'cvxpy', _CVXPY_FNS)} == 0")
    for i, v in enumerate(pb.variables):
        if math.isfinite(v.lb):
            constraints.append(f"v{i} >= {v.lb!r}")
        if math.isfinite(v.ub):
            constraints.append(f"v{i} <= {v.ub!r}")
    if constraints:
        lines.append("constraints = [")
        lines.extend(f"    {c}," for c in constraints)
        lines.append("]")
        lines.append("problem = cp.Problem(objective, constraints)")
    else:
        lines.append("problem = cp.Problem(objective)")
    lines += [
        "",
        "problem.solve()",
        'print("Objective Function Value:", problem.value)',
    ]
    for i, v in enumerate(pb.variables):
        lines.append(f'print("{v.name} =", v{i}.value)')
    return "\n".join(lines) + "\n"


_GUROBI_FNS: dict[str, str] = {}  # linear/quadratic algebra only


def _emit_gurobi(pb: Problem) -> str:
    names = pb.var_names()
    sym = {v: f"v{i}" for i, v in enumerate(names)}
    params = pb.parameters
    lines = [
        "import gurobipy as gp",
        "from gurobipy import GRB",
        "",
        f'model = gp.Model({pb.name!r})',
    ]
    for i, v in enumerate(pb.variables):
        lo = "-GRB.INFINITY" if math.isinf(v.lb) else repr(v.lb)
        hi = "GRB.INFINITY" if math.isinf(v.ub) else repr(v.ub)
        lines.append(f"v{i} = model.addVar(lb={lo}, ub={hi}, name={v.name!r})")
    obj_src = _render(pb.objective, sym, params, "gurobi", _GUROBI_FNS)
    sense = "GRB.MAXIMIZE" if pb.direction is Direction.MAXIMIZE else "GRB.MINIMIZE"
    lines += ["", f"model.setObjective({obj_src}, {sense})"]
    for i, g in enumerate(pb.ineq):
        lines.append(
            f"model.addConstr({_render(g, sym, params, 'gurobi', _GUROBI_FNS)} <= 0, "
            f"name='ineq_{i}')"
        )
    for j, h in enumerate(pb.eq):
        lines.append(
            f"model.addConstr({_render(h, sym, params, 'gurobi', _GUROBI_FNS)} == 0, "
            f"name='eq_{j}')"
        )
    lines += [
        "",
        "model.optimize()",
        'print("Objective Function Value:", model.ObjVal)',
    ]
    for i, v in enumerate(pb.variables):
        lines.append(f'print("{v.name} =", v{i}.X)')
    return "\n".join(lines) + "\n"


def _mid(lo: float, hi: float) -> float:
    if math.isfinite(lo) and math.isfinite(hi):
        return 0.5 * (lo + hi)
    if math.isfinite(lo):
        return lo + 1.0
    return 0.0
