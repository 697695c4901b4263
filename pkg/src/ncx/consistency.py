"""Four-criterion consistency validation and the NL extraction front end."""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, field, replace

from .dsl import parse_problem
from .errors import ExtractionFailedError, GatewayError, NcxError
from .expr import Div, Exp, Log, Log2, ScalarExpr, Sqrt, Var, free_vars
from .gateway import ModelGateway, extract_fenced, normalize_binary
from .jsonio import parse_json
from .problem import Direction, NlDescription, Problem


@dataclass(frozen=True)
class ConsistencyReport:
    """Outcome of the four validation criteria.

    alignment is the only model-backed criterion; without a gateway it is
    vacuously true and flagged as skipped.
    """

    alignment: bool
    completeness: bool
    type_correctness: bool
    value_accuracy: bool
    alignment_skipped: bool = False
    diagnostics: tuple[str, ...] = ()

    @property
    def i_c(self) -> bool:
        return (self.alignment and self.completeness
                and self.type_correctness and self.value_accuracy)

    def as_dict(self) -> dict:
        return {
            "alignment": self.alignment,
            "completeness": self.completeness,
            "type_correctness": self.type_correctness,
            "value_accuracy": self.value_accuracy,
            "alignment_skipped": self.alignment_skipped,
            "i_c": self.i_c,
            "diagnostics": list(self.diagnostics),
        }


def _discrete_in_bad_position(expr: ScalarExpr, discrete: set[str]) -> str | None:
    """Name of a discrete variable appearing inside log/log2/exp/sqrt or a
    division denominator, if any."""
    if isinstance(expr, (Log, Log2, Exp, Sqrt)):
        hit = free_vars(expr.child) & discrete
        if hit:
            return sorted(hit)[0]
    if isinstance(expr, Div):
        hit = free_vars(expr.den) & discrete
        if hit:
            return sorted(hit)[0]
    for child in expr.children():
        found = _discrete_in_bad_position(child, discrete)
        if found:
            return found
    return None


def validate_consistency(pb: Problem, desc: NlDescription | None = None,
                         gateway: ModelGateway | None = None) -> ConsistencyReport:
    diagnostics: list[str] = []

    declared = {v.name for v in pb.variables}
    used: set[str] = set()
    undeclared: set[str] = set()
    for e in pb.all_exprs():
        names = free_vars(e)
        used |= names
        undeclared |= names - declared
    unused = declared - used
    completeness = not unused and not undeclared
    for name in sorted(unused):
        diagnostics.append(f"completeness: variable {name!r} never appears")
    for name in sorted(undeclared):
        diagnostics.append(f"completeness: undeclared symbol {name!r} referenced")

    discrete = {v.name for v in pb.variables if v.is_discrete}
    type_correctness = True
    if discrete:
        for label, e in [("objective", pb.objective)] \
                + [(f"ineq[{i}]", g) for i, g in enumerate(pb.ineq)] \
                + [(f"eq[{j}]", h) for j, h in enumerate(pb.eq)]:
            bad = _discrete_in_bad_position(e, discrete)
            if bad:
                type_correctness = False
                diagnostics.append(
                    f"types: discrete variable {bad!r} inside a nonlinear atom in {label}"
                )

    value_accuracy = True
    for name in sorted(pb.referenced_params()):
        value = pb.parameters.get(name)
        if value is None:
            value_accuracy = False
            diagnostics.append(f"values: parameter {name!r} has no value")
        elif not math.isfinite(value):
            value_accuracy = False
            diagnostics.append(f"values: parameter {name!r} is not finite")

    alignment = True
    skipped = True
    if desc is not None and gateway is not None:
        skipped = False
        payload = (
            f"Description:\n{desc.text}\n\nFormulation:\n"
            f"{_formulation_summary(pb)}\n\nSolution: (not yet computed; "
            f"judge whether the formulation matches the description)"
        )
        try:
            reply = gateway.complete("feasibility_check_query", payload)
            alignment = normalize_binary(reply) == "1"
            if not alignment:
                diagnostics.append("alignment: model judged formulation inconsistent")
        except GatewayError as exc:
            alignment = False
            diagnostics.append(f"alignment: gateway failure ({exc})")
    else:
        diagnostics.append("alignment: skipped (no description or gateway)")

    return ConsistencyReport(
        alignment=alignment,
        completeness=completeness,
        type_correctness=type_correctness,
        value_accuracy=value_accuracy,
        alignment_skipped=skipped,
        diagnostics=tuple(diagnostics),
    )


def _formulation_summary(pb: Problem) -> str:
    lines = [f"{pb.direction.value} {pb.objective}"]
    lines.extend(f"  {g} <= 0" for g in pb.ineq)
    lines.extend(f"  {h} == 0" for h in pb.eq)
    lines.extend(
        f"  {v.name}: {v.kind.value} in [{v.lb}, {v.ub}]" for v in pb.variables
    )
    return "\n".join(lines)


_FLAG_RE = re.compile(r"\[Optimization Flag:\s*([01])\]")


@dataclass(frozen=True)
class ExtractionOutcome:
    problem: Problem
    report: ConsistencyReport
    diagnostics: tuple[str, ...] = ()
    rounds_used: int = 1


def _parse_reply_payload(reply: str) -> Problem:
    payload = extract_fenced(reply)
    if payload is None:
        payload = reply.strip()
    stripped = payload.lstrip()
    if stripped.startswith("{"):
        return parse_json(payload)
    return parse_problem(payload)


def extract_from_nl(desc: NlDescription, gateway: ModelGateway,
                    max_rounds: int = 3) -> ExtractionOutcome:
    """Query the model for a formulation, parse it, and validate, retrying
    up to max_rounds until the consistency check passes.

    The optimization-flag marker in the reply decides the direction; a
    missing marker defaults to minimize with a diagnostic.
    """
    last_report: ConsistencyReport | None = None
    last_error = "no rounds executed"
    for round_no in range(1, max_rounds + 1):
        diagnostics: list[str] = []
        reply = gateway.complete("math_query", desc.text)
        try:
            pb = _parse_reply_payload(reply)
        except NcxError as exc:
            last_error = f"round {round_no}: unparsable reply ({exc})"
            continue
        match = _FLAG_RE.search(reply)
        if match:
            direction = Direction.MAXIMIZE if match.group(1) == "1" else Direction.MINIMIZE
        else:
            direction = Direction.MINIMIZE
            diagnostics.append("missing optimization-flag marker; defaulted to minimize")
        if direction is not pb.direction:
            if match:
                diagnostics.append(
                    f"flag marker overrode parsed direction {pb.direction.value}"
                )
            pb = replace(pb, direction=direction)
        report = validate_consistency(pb, desc, gateway)
        last_report = report
        if report.i_c:
            return ExtractionOutcome(pb, report, tuple(diagnostics), round_no)
        last_error = f"round {round_no}: consistency check failed"
    raise ExtractionFailedError(max_rounds, last_report, last_error)
