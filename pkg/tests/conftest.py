"""Shared fixtures: the worked power-allocation problem, random expression
generators with safe evaluation boxes, and replay-gateway builders."""

from __future__ import annotations

import random
from pathlib import Path

import pytest

from ncx.dsl import parse_problem
from ncx.expr import (
    Abs,
    Add,
    Const,
    Div,
    Exp,
    Log,
    Log2,
    Mul,
    Neg,
    Pow,
    ScalarExpr,
    Sqrt,
    Var,
)

CORPUS_DIR = Path(__file__).resolve().parents[1] / "src" / "ncx" / "corpus"

CASE_STUDY_SRC = """\
problem power_allocation
param G = [1, 1, 1, 1, 1]
param N0 = 0.001
param Pmax = 10
param Rmin = 5
var p[5] continuous in [0, 10]
maximize sum(log2(1 + p[i]*G[i]/N0), i, 1, 5)
subject to
  sum(p[i], i, 1, 5) <= Pmax
  p[i]*G[i] >= N0*(2^Rmin - 1) for i in 1..5
"""

CASE_STUDY_VALUE = 54.8325272595287
CASE_STUDY_POINT = 2.0


@pytest.fixture
def case_study():
    return parse_problem(CASE_STUDY_SRC)


@pytest.fixture
def corpus_dir():
    return CORPUS_DIR


def central_difference(fn, point: dict, name: str, h: float = 1e-6) -> float:
    """The independent gradient oracle: symmetric finite differences."""
    hi = dict(point)
    lo = dict(point)
    hi[name] += h
    lo[name] -= h
    return (fn(hi) - fn(lo)) / (2.0 * h)


def random_smooth_expr(rng: random.Random, names: list[str],
                       depth: int = 3) -> ScalarExpr:
    """Expressions that are smooth and evaluable on [-2, 2]^n.

    Arguments of log/sqrt/div are shifted positive; powers use integer or
    positive-base forms, so central differences are well conditioned."""
    if depth == 0 or rng.random() < 0.25:
        if rng.random() < 0.5:
            return Var(rng.choice(names))
        return Const(round(rng.uniform(-3.0, 3.0), 3))
    pick = rng.randrange(9)
    sub = lambda: random_smooth_expr(rng, names, depth - 1)  # noqa: E731
    if pick == 0:
        return Add((sub(), sub()))
    if pick == 1:
        return Mul((sub(), sub()))
    if pick == 2:
        return Neg(sub())
    if pick == 3:
        return Div(sub(), Add((Const(3.0), Mul((sub(), sub())))))
    if pick == 4:
        return Pow(sub(), float(rng.choice([2, 3])))
    if pick == 5:
        return Log(Add((Const(1.5), Pow(sub(), 2.0))))
    if pick == 6:
        return Log2(Add((Const(1.5), Pow(sub(), 2.0))))
    if pick == 7:
        return Exp(Mul((Const(0.25), sub())))
    return Sqrt(Add((Const(1.0), Pow(sub(), 2.0))))


def random_point(rng: random.Random, names: list[str],
                 lo: float = -2.0, hi: float = 2.0) -> dict:
    return {n: rng.uniform(lo, hi) for n in names}


def gateway_replaying(tmp_path, entries, mode: str = "replay"):
    """Build a ModelGateway whose fixture file answers the given
    (template_id, input_text) -> reply pairs."""
    from ncx.gateway import (
        GatewayConfig,
        ModelGateway,
        load_templates,
        render_prompt,
        write_fixture,
    )

    templates = load_templates()
    fixture = tmp_path / "replies.jsonl"
    rows = []
    for template_id, input_text, reply in entries:
        rendered = render_prompt(templates[template_id], input_text)
        rows.append((template_id, rendered, reply))
    write_fixture(fixture, rows)
    return ModelGateway(GatewayConfig(mode=mode, fixture_path=fixture))
