"""Canonical JSON form for problems.

Schema::

    {
      "name": str,
      "direction": "minimize" | "maximize",
      "variables": [{"name": str, "kind": str, "lb": num|null, "ub": num|null}],
      "parameters": {str: num},
      "objective": <node>,
      "ineq": [<node>],
      "eq": [<node>]
    }

Expression nodes are tagged objects {"op": ..., ...}: "const" carries
"value", "var"/"param" carry "name", and the remaining ops carry "args".
Missing bounds serialize as null (JSON has no infinity).
"""

from __future__ import annotations

import json
import math
from typing import Any

from .errors import SchemaError
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
from .problem import Direction, Problem, VarDecl, VarKind

_UNARY_OPS = {"neg": Neg, "log": Log, "log2": Log2, "exp": Exp, "abs": Abs, "sqrt": Sqrt}


def expr_to_node(expr: ScalarExpr) -> dict[str, Any]:
    if isinstance(expr, Const):
        return {"op": "const", "value": expr.value}
    if isinstance(expr, Var):
        return {"op": "var", "name": expr.name}
    if isinstance(expr, Param):
        return {"op": "param", "name": expr.name}
    if isinstance(expr, Add):
        return {"op": "add", "args": [expr_to_node(t) for t in expr.terms]}
    if isinstance(expr, Mul):
        return {"op": "mul", "args": [expr_to_node(f) for f in expr.factors]}
    if isinstance(expr, Div):
        return {"op": "div", "args": [expr_to_node(expr.num), expr_to_node(expr.den)]}
    if isinstance(expr, Pow):
        return {"op": "pow", "args": [expr_to_node(expr.base),
                                      {"op": "const", "value": expr.exponent}]}
    for op, cls in _UNARY_OPS.items():
        if isinstance(expr, cls):
            return {"op": op, "args": [expr_to_node(expr.child)]}
    raise TypeError(f"unknown node {type(expr).__name__}")


def node_to_expr(node: Any, path: str) -> ScalarExpr:
    if not isinstance(node, dict):
        raise SchemaError(path, f"expected an expression object, got {type(node).__name__}")
    op = node.get("op")
    if op == "const":
        value = node.get("value")
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(path + "/value", "expected a number")
        if not math.isfinite(float(value)):
            raise SchemaError(path + "/value", "expected a finite number")
        return Const(float(value))
    if op in ("var", "param"):
        name = node.get("name")
        if not isinstance(name, str) or not name:
            raise SchemaError(path + "/name", "expected a nonempty string")
        return Var(name) if op == "var" else Param(name)
    args = node.get("args")
    if not isinstance(args, list):
        raise SchemaError(path + "/args", "expected a list")
    children = [node_to_expr(a, f"{path}/args/{i}") for i, a in enumerate(args)]
    if op == "add":
        if not children:
            raise SchemaError(path + "/args", "add needs at least one argument")
        return children[0] if len(children) == 1 else Add(tuple(children))
    if op == "mul":
        if not children:
            raise SchemaError(path + "/args", "mul needs at least one argument")
        return children[0] if len(children) == 1 else Mul(tuple(children))
    if op == "div":
        if len(children) != 2:
            raise SchemaError(path + "/args", "div takes exactly two arguments")
        if isinstance(children[1], Const) and children[1].value == 0.0:
            raise SchemaError(path + "/args/1", "denominator is the literal constant 0")
        return Div(children[0], children[1])
    if op == "pow":
        if len(children) != 2:
            raise SchemaError(path + "/args", "pow takes exactly two arguments")
        if not isinstance(children[1], Const):
            raise SchemaError(path + "/args/1", "pow exponent must be a constant node")
        return Pow(children[0], children[1].value)
    if op in _UNARY_OPS:
        if len(children) != 1:
            raise SchemaError(path + "/args", f"{op} takes exactly one argument")
        return _UNARY_OPS[op](children[0])
    raise SchemaError(path + "/op", f"unknown op {op!r}")


def _bound_to_json(value: float) -> float | None:
    return None if math.isinf(value) else value


def _bound_from_json(value: Any, path: str, default: float) -> float:
    if value is None:
        return default
    if not isinstance(value, (int, float)) or isinstance(value, bool):
        raise SchemaError(path, "expected a number or null")
    return float(value)


def problem_to_dict(pb: Problem) -> dict[str, Any]:
    return {
        "name": pb.name,
        "direction": pb.direction.value,
        "variables": [
            {"name": v.name, "kind": v.kind.value,
             "lb": _bound_to_json(v.lb), "ub": _bound_to_json(v.ub)}
            for v in pb.variables
        ],
        "parameters": {k: pb.parameters[k] for k in sorted(pb.parameters)},
        "objective": expr_to_node(pb.objective),
        "ineq": [expr_to_node(g) for g in pb.ineq],
        "eq": [expr_to_node(h) for h in pb.eq],
    }


def problem_from_dict(doc: Any) -> Problem:
    if not isinstance(doc, dict):
        raise SchemaError("/", "expected a JSON object")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise SchemaError("/name", "expected a nonempty string")
    direction = doc.get("direction")
    if direction not in ("minimize", "maximize"):
        raise SchemaError("/direction", "expected 'minimize' or 'maximize'")
    raw_vars = doc.get("variables")
    if not isinstance(raw_vars, list):
        raise SchemaError("/variables", "expected a list")
    variables = []
    for i, rv in enumerate(raw_vars):
        vpath = f"/variables/{i}"
        if not isinstance(rv, dict):
            raise SchemaError(vpath, "expected an object")
        vname = rv.get("name")
        if not isinstance(vname, str) or not vname:
            raise SchemaError(vpath + "/name", "expected a nonempty string")
        kind_text = rv.get("kind", "continuous")
        try:
            kind = VarKind(kind_text)
        except ValueError:
            raise SchemaError(vpath + "/kind",
                              f"expected continuous/integer/binary, got {kind_text!r}") from None
        lb = _bound_from_json(rv.get("lb"), vpath + "/lb", -math.inf)
        ub = _bound_from_json(rv.get("ub"), vpath + "/ub", math.inf)
        try:
            variables.append(VarDecl(vname, kind, lb, ub))
        except Exception as exc:
            raise SchemaError(vpath, str(exc)) from None
    raw_params = doc.get("parameters", {})
    if not isinstance(raw_params, dict):
        raise SchemaError("/parameters", "expected an object")
    parameters: dict[str, float] = {}
    for key, value in raw_params.items():
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise SchemaError(f"/parameters/{key}", "expected a number")
        parameters[key] = float(value)
    if "objective" not in doc:
        raise SchemaError("/objective", "missing")
    objective = node_to_expr(doc["objective"], "/objective")
    for section in ("ineq", "eq"):
        if not isinstance(doc.get(section, []), list):
            raise SchemaError(f"/{section}", "expected a list")
    ineq = tuple(node_to_expr(g, f"/ineq/{i}") for i, g in enumerate(doc.get("ineq", [])))
    eq = tuple(node_to_expr(h, f"/eq/{i}") for i, h in enumerate(doc.get("eq", [])))
    pb = Problem(
        name=name,
        direction=Direction(direction),
        objective=objective,
        ineq=ineq,
        eq=eq,
        variables=tuple(variables),
        parameters=parameters,
    )
    try:
        pb.check_declarations()
    except Exception as exc:
        raise SchemaError("/", str(exc)) from None
    return pb


def emit_json(pb: Problem) -> bytes:
    """Canonical UTF-8 JSON bytes: sorted parameters, two-space indent."""
    return json.dumps(problem_to_dict(pb), indent=2).encode("utf-8") + b"\n"


def parse_json(data: bytes | str) -> Problem:
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise SchemaError("/", f"invalid UTF-8: {exc.reason}") from None
    try:
        doc = json.loads(data)
    except json.JSONDecodeError as exc:
        raise SchemaError("/", f"invalid JSON: {exc.msg} at line {exc.lineno}") from None
    return problem_from_dict(doc)
