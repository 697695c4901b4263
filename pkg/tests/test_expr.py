"""Expression core: evaluation, differentiation, substitution,
simplification. Gradients are checked against central finite differences,
which stay the independent oracle throughout."""

from __future__ import annotations

import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ncx.errors import DomainError, NonDifferentiableError, UnboundSymbolError
from ncx.expr import (
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
    Sqrt,
    Var,
    compile_fn,
    differentiate,
    evaluate,
    free_params,
    free_vars,
    gradient,
    simplify,
    substitute,
)

from conftest import central_difference, random_point, random_smooth_expr


class TestEvaluate:
    def test_case_study_utility_term(self):
        # log2(1 + p/0.001) at p = 2 is log2(2001)
        e = Log2(Const(1.0) + Var("p") / Const(0.001))
        assert evaluate(e, {"p": 2.0}) == pytest.approx(math.log2(2001.0), rel=1e-12)

    def test_additive_identity(self):
        e = Var("x") + Const(0.0) * Var("y")
        assert evaluate(e, {"x": 3.0, "y": 7.0}) == 3.0

    def test_hand_arithmetic(self):
        e = Var("x1") * Var("x2") - 1.0
        assert evaluate(e, {"x1": 1.5, "x2": 2.0}) == 2.0

    def test_unbound_symbol(self):
        with pytest.raises(UnboundSymbolError) as err:
            evaluate(Var("x") + Param("c"), {"x": 1.0})
        assert err.value.name == "c"

    @pytest.mark.parametrize("expr,point", [
        (Log(Var("x")), {"x": -1.0}),
        (Log2(Var("x")), {"x": 0.0}),
        (Sqrt(Var("x")), {"x": -4.0}),
        (Div(Const(1.0), Var("x")), {"x": 0.0}),
        (Pow(Var("x"), 0.5), {"x": -1.0}),
        (Exp(Var("x")), {"x": 1000.0}),
    ])
    def test_domain_failures_are_typed(self, expr, point):
        with pytest.raises(DomainError):
            evaluate(expr, point)

    def test_never_returns_non_finite(self):
        rng = random.Random(7)
        for _ in range(300):
            e = random_smooth_expr(rng, ["x", "y"])
            point = random_point(rng, ["x", "y"])
            try:
                value = evaluate(e, point)
            except DomainError:
                continue
            assert math.isfinite(value)

    def test_literal_zero_denominator_rejected(self):
        with pytest.raises(ValueError):
            Div(Var("x"), Const(0.0))


class TestGradient:
    def test_square(self):
        assert gradient(Pow(Var("x"), 2.0), {"x": 1.0}, {"x"}) == {"x": 2.0}

    def test_bilinear(self):
        g = gradient(Var("x1") * Var("x2"), {"x1": 1.0, "x2": 1.0}, {"x1", "x2"})
        assert g == {"x1": 1.0, "x2": 1.0}

    def test_case_study_rate_derivative(self):
        # d/dp log2(1 + p/0.001) at p=2 equals 1000/(2001 ln 2); frozen from
        # the finite-difference oracle below.
        e = Log2(Const(1.0) + Var("p") / Const(0.001))
        sym = gradient(e, {"p": 2.0}, {"p"})["p"]
        expected = 1000.0 / (2001.0 * math.log(2.0))
        assert sym == pytest.approx(expected, rel=1e-12)
        fd = central_difference(lambda a: evaluate(e, a), {"p": 2.0}, "p")
        assert sym == pytest.approx(fd, rel=1e-6)

    def test_matches_finite_differences_on_corpus(self):
        rng = random.Random(2024)
        names = ["x", "y"]
        checked = 0
        while checked < 250:
            e = random_smooth_expr(rng, names)
            if not free_vars(e):
                continue
            point = random_point(rng, names)
            try:
                sym = gradient(e, point, free_vars(e))
            except DomainError:
                continue
            for name, value in sym.items():
                fd = central_difference(lambda a: evaluate(e, a), point, name)
                assert abs(value - fd) / (1.0 + abs(value)) <= 1e-5
            checked += 1

    def test_abs_subgradient_zero_at_kink(self):
        assert gradient(Abs(Var("x")), {"x": 0.0}, {"x"}) == {"x": 0.0}
        assert gradient(Abs(Var("x")), {"x": -2.0}, {"x"}) == {"x": -1.0}

    def test_sqrt_kink_raises(self):
        with pytest.raises(NonDifferentiableError):
            gradient(Sqrt(Var("x")), {"x": 0.0}, {"x"})

    def test_symbolic_tree_agrees_with_forward_mode(self):
        rng = random.Random(99)
        for _ in range(100):
            e = random_smooth_expr(rng, ["x", "y"])
            if "x" not in free_vars(e):
                continue
            point = random_point(rng, ["x", "y"])
            try:
                forward = gradient(e, point, {"x"})["x"]
                tree = evaluate(differentiate(e, "x"), point)
            except DomainError:
                continue
            assert tree == pytest.approx(forward, rel=1e-9, abs=1e-9)


class TestSubstitute:
    def test_change_of_variables(self):
        out = substitute(Log(Var("z")), {"z": Var("p") * Param("h")})
        assert out == Log(Var("p") * Param("h"))

    def test_empty_binding_is_identity(self):
        e = Var("x") + Var("y")
        assert substitute(e, {}) is e

    def test_no_resubstitution(self):
        out = substitute(Var("x") * Var("x"), {"x": Var("x") + Const(1.0)})
        expected = (Var("x") + Const(1.0)) * (Var("x") + Const(1.0))
        assert out == expected

    @given(st.floats(-5, 5), st.floats(-5, 5))
    def test_identity_bindings_preserve_trees(self, a, b):
        e = Add((Mul((Var("x"), Const(a))), Const(b), Sqrt(Add((Const(9.0), Pow(Var("y"), 2.0))))))
        assert substitute(e, {"x": Var("x"), "y": Var("y")}) == e


class TestSimplify:
    def test_constant_fold(self):
        assert simplify(Const(2.0) * Const(3.0) + Var("x")) == Add((Const(6.0), Var("x")))

    def test_identities(self):
        assert simplify(Var("x") * Const(1.0) + Const(0.0)) == Var("x")

    def test_equivalence_at_sample_point(self):
        e = Pow(Add((Var("x"), Neg(Const(1.0)))), 2.0)
        assert evaluate(simplify(e), {"x": 4.0}) == evaluate(e, {"x": 4.0}) == 9.0

    def test_random_equivalence(self):
        rng = random.Random(5)
        for _ in range(200):
            e = random_smooth_expr(rng, ["x", "y"])
            s = simplify(e)
            for _ in range(5):
                point = random_point(rng, ["x", "y"])
                try:
                    expected = evaluate(e, point)
                except DomainError:
                    continue
                got = evaluate(s, point)
                assert abs(got - expected) <= 1e-12 * (1.0 + abs(expected))

    def test_fold_inside_unary(self):
        assert simplify(Sqrt(Const(2.0) * Const(8.0))) == Const(4.0)


class TestFreeSymbols:
    def test_params_not_variables(self):
        e = Log2(Const(1.0) + Var("p") * Param("h") / Param("s2"))
        assert free_vars(e) == {"p"}
        assert free_params(e) == {"h", "s2"}

    def test_constant_has_none(self):
        assert free_vars(Const(5.0)) == set()

    def test_hand_enumeration(self):
        assert free_vars(Var("x1") * Var("x2") + Var("x1")) == {"x1", "x2"}


class TestAssignment:
    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Assignment({"x": math.nan})
        with pytest.raises(ValueError):
            Assignment({"x": math.inf})

    def test_mapping_protocol(self):
        a = Assignment({"x": 1.0}, y=2.0)
        assert a["x"] == 1.0 and a["y"] == 2.0
        assert set(a) == {"x", "y"}
        assert a.updated({"x": 3.0})["x"] == 3.0


class TestCompile:
    def test_matches_interpreter(self):
        rng = random.Random(11)
        for _ in range(150):
            e = random_smooth_expr(rng, ["x", "y"])
            fn = compile_fn(e, ["x", "y"], {})
            point = random_point(rng, ["x", "y"])
            try:
                expected = evaluate(e, point)
            except DomainError:
                continue
            assert fn([point["x"], point["y"]]) == pytest.approx(expected, rel=1e-12)

    def test_params_baked_in(self):
        e = Var("p") * Param("G") / Param("N0")
        fn = compile_fn(e, ["p"], {"G": 1.0, "N0": 0.001})
        assert fn([2.0]) == pytest.approx(2000.0)
