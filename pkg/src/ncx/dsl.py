"""Parser for the problem-modeling DSL.

Grammar sketch::

    problem     ::= "problem" ident (decl | objective | "subject" "to" constraint+)+
    decl        ::= "var" ident ["[" int "]"] kind ["in" "[" num "," num "]"]
                  | "param" ident "=" (num | "[" num ("," num)* "]")
    objective   ::= ("minimize" | "maximize") expr
    constraint  ::= expr ("<=" | ">=" | "==") expr ["for" ident "in" int ".." int]
    expr        ::= sums and products over + - * / ^ with log, log2, exp,
                    abs, sqrt, sum(body, i, lo, hi) and indexed refs a[i]

Comments run from '#' to end of line. Indexed families are expanded to
scalars here: `var p[5]` declares p[1]..p[5], and sum/for constructs are
unrolled. Inequalities are normalized to g(x) <= 0 and equalities to
h(x) = 0; strict inequalities are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import (
    BoundViolationError,
    DomainError,
    DslSyntaxError,
    DuplicateDeclarationError,
    UnboundSymbolError,
    UndeclaredSymbolError,
)
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
    evaluate,
    free_vars,
)
from .problem import Direction, Problem, VarDecl, VarKind

_KEYWORDS = {
    "problem", "var", "param", "minimize", "maximize", "subject", "to",
    "for", "in", "continuous", "integer", "binary",
    "sum", "log", "log2", "exp", "abs", "sqrt",
}

_FUNCS = {"log", "log2", "exp", "abs", "sqrt"}

_MAX_DEPTH = 200


@dataclass
class _Token:
    kind: str  # IDENT | NUMBER | OP | EOF
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Token]:
    tokens: list[_Token] = []
    line, col = 1, 1
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch == "\n":
            line += 1
            col = 1
            i += 1
            continue
        if ch in " \t\r":
            i += 1
            col += 1
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                i += 1
            continue
        start_line, start_col = line, col
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(_Token("IDENT", text[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            while j < n and text[j].isdigit():
                j += 1
            if j < n and text[j] == "." and not (j + 1 < n and text[j + 1] == "."):
                j += 1
                while j < n and text[j].isdigit():
                    j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            tokens.append(_Token("NUMBER", text[i:j], start_line, start_col))
            col += j - i
            i = j
            continue
        two = text[i:i + 2]
        if two in ("<=", ">=", "==", ".."):
            tokens.append(_Token("OP", two, start_line, start_col))
            i += 2
            col += 2
            continue
        if ch in "+-*/^()[],=<>":
            tokens.append(_Token("OP", ch, start_line, start_col))
            i += 1
            col += 1
            continue
        raise DslSyntaxError(line, col, f"a token (got {ch!r})")
    tokens.append(_Token("EOF", "", line, col))
    return tokens


# Parser-internal expression AST; lowered to ScalarExpr once index
# variables are bound.
_Num = tuple  # ("num", value)


class _Parser:
    def __init__(self, text: str):
        self.tokens = _tokenize(text)
        self.pos = 0
        # symbol tables filled while parsing declarations
        self.scalar_vars: dict[str, VarDecl] = {}
        self.array_vars: dict[str, int] = {}
        self.scalar_params: dict[str, float] = {}
        self.array_params: dict[str, int] = {}

    # -- token plumbing ----------------------------------------------------

    def peek(self) -> _Token:
        return self.tokens[self.pos]

    def next(self) -> _Token:
        tok = self.tokens[self.pos]
        self.pos += 1
        return tok

    def fail(self, expected: str) -> DslSyntaxError:
        tok = self.peek()
        got = tok.text or "end of input"
        return DslSyntaxError(tok.line, tok.col, f"{expected} (got {got!r})")

    def expect_op(self, text: str) -> _Token:
        tok = self.peek()
        if tok.kind == "OP" and tok.text == text:
            return self.next()
        raise self.fail(f"{text!r}")

    def expect_ident(self, what: str = "an identifier") -> _Token:
        tok = self.peek()
        if tok.kind == "IDENT" and tok.text not in _KEYWORDS:
            return self.next()
        raise self.fail(what)

    def at_keyword(self, *words: str) -> bool:
        tok = self.peek()
        return tok.kind == "IDENT" and tok.text in words

    def eat_keyword(self, word: str) -> None:
        if not self.at_keyword(word):
            raise self.fail(f"keyword {word!r}")
        self.next()

    # -- numbers -----------------------------------------------------------

    def parse_signed_number(self) -> float:
        sign = 1.0
        while self.peek().kind == "OP" and self.peek().text in "+-":
            if self.next().text == "-":
                sign = -sign
        tok = self.peek()
        if tok.kind != "NUMBER":
            raise self.fail("a number")
        self.next()
        return sign * float(tok.text)

    # -- expressions (internal AST) -----------------------------------------

    def parse_expr_ast(self, depth: int = 0):
        if depth > _MAX_DEPTH:
            tok = self.peek()
            raise DslSyntaxError(tok.line, tok.col, "a shallower expression")
        node = self.parse_term_ast(depth + 1)
        while self.peek().kind == "OP" and self.peek().text in "+-":
            op = self.next().text
            rhs = self.parse_term_ast(depth + 1)
            node = ("bin", op, node, rhs)
        return node

    def parse_term_ast(self, depth: int):
        if depth > _MAX_DEPTH:
            tok = self.peek()
            raise DslSyntaxError(tok.line, tok.col, "a shallower expression")
        node = self.parse_unary_ast(depth + 1)
        while self.peek().kind == "OP" and self.peek().text in "*/":
            op = self.next().text
            rhs = self.parse_unary_ast(depth + 1)
            node = ("bin", op, node, rhs)
        return node

    def parse_unary_ast(self, depth: int):
        if depth > _MAX_DEPTH:
            tok = self.peek()
            raise DslSyntaxError(tok.line, tok.col, "a shallower expression")
        if self.peek().kind == "OP" and self.peek().text == "-":
            self.next()
            return ("neg", self.parse_unary_ast(depth + 1))
        if self.peek().kind == "OP" and self.peek().text == "+":
            self.next()
            return self.parse_unary_ast(depth + 1)
        return self.parse_power_ast(depth + 1)

    def parse_power_ast(self, depth: int):
        base = self.parse_atom_ast(depth + 1)
        if self.peek().kind == "OP" and self.peek().text == "^":
            self.next()
            exponent = self.parse_unary_ast(depth + 1)
            return ("pow", base, exponent)
        return base

    def parse_atom_ast(self, depth: int):
        if depth > _MAX_DEPTH:
            tok = self.peek()
            raise DslSyntaxError(tok.line, tok.col, "a shallower expression")
        tok = self.peek()
        if tok.kind == "NUMBER":
            self.next()
            return ("num", float(tok.text))
        if tok.kind == "OP" and tok.text == "(":
            self.next()
            inner = self.parse_expr_ast(depth + 1)
            self.expect_op(")")
            return inner
        if tok.kind == "IDENT":
            if tok.text == "sum":
                self.next()
                self.expect_op("(")
                body = self.parse_expr_ast(depth + 1)
                self.expect_op(",")
                ivar = self.expect_ident("an index variable").text
                self.expect_op(",")
                lo = self.parse_expr_ast(depth + 1)
                self.expect_op(",")
                hi = self.parse_expr_ast(depth + 1)
                self.expect_op(")")
                return ("sum", body, ivar, lo, hi)
            if tok.text in _FUNCS:
                self.next()
                self.expect_op("(")
                arg = self.parse_expr_ast(depth + 1)
                self.expect_op(")")
                return ("call", tok.text, arg)
            if tok.text in _KEYWORDS:
                raise self.fail("an expression")
            self.next()
            if self.peek().kind == "OP" and self.peek().text == "[":
                self.next()
                idx = self.parse_expr_ast(depth + 1)
                self.expect_op("]")
                return ("ref", tok.text, idx, tok.line, tok.col)
            return ("ref", tok.text, None, tok.line, tok.col)
        raise self.fail("an expression")

    # -- lowering to ScalarExpr ---------------------------------------------

    def lower(self, ast, env: dict[str, int]) -> ScalarExpr:
        kind = ast[0]
        if kind == "num":
            return Const(ast[1])
        if kind == "neg":
            return Neg(self.lower(ast[1], env))
        if kind == "bin":
            op, lhs_ast, rhs_ast = ast[1], ast[2], ast[3]
            lhs, rhs = self.lower(lhs_ast, env), self.lower(rhs_ast, env)
            if op == "+":
                return Add((lhs, rhs))
            if op == "-":
                return Add((lhs, Neg(rhs)))
            if op == "*":
                return Mul((lhs, rhs))
            if op == "/":
                if isinstance(rhs, Const) and rhs.value == 0.0:
                    raise BoundViolationError("division by the literal constant 0")
                return Div(lhs, rhs)
            raise AssertionError(op)
        if kind == "pow":
            base = self.lower(ast[1], env)
            exponent = self.fold_const(ast[2], env, "a constant exponent")
            return Pow(base, exponent)
        if kind == "call":
            fn, arg = ast[1], self.lower(ast[2], env)
            return {"log": Log, "log2": Log2, "exp": Exp, "abs": Abs, "sqrt": Sqrt}[fn](arg)
        if kind == "sum":
            _, body, ivar, lo_ast, hi_ast = ast
            lo = self.fold_int(lo_ast, env, "an integer sum lower bound")
            hi = self.fold_int(hi_ast, env, "an integer sum upper bound")
            if hi < lo:
                raise BoundViolationError(f"empty sum range {lo}..{hi}")
            terms = []
            for k in range(lo, hi + 1):
                terms.append(self.lower(body, {**env, ivar: k}))
            return terms[0] if len(terms) == 1 else Add(tuple(terms))
        if kind == "ref":
            _, name, idx_ast, line, col = ast
            if idx_ast is None:
                if name in env:
                    return Const(float(env[name]))
                if name in self.scalar_vars:
                    return Var(name)
                if name in self.scalar_params:
                    return Param(name)
                if name in self.array_vars or name in self.array_params:
                    raise DslSyntaxError(line, col, f"an index for array symbol {name!r}")
                raise UndeclaredSymbolError(name, line)
            k = self.fold_int(idx_ast, env, "an integer index")
            element = f"{name}[{k}]"
            if name in self.array_vars:
                if not 1 <= k <= self.array_vars[name]:
                    raise BoundViolationError(
                        f"index {k} out of range for {name}[{self.array_vars[name]}]"
                    )
                return Var(element)
            if name in self.array_params:
                if not 1 <= k <= self.array_params[name]:
                    raise BoundViolationError(
                        f"index {k} out of range for {name}[{self.array_params[name]}]"
                    )
                return Param(element)
            raise UndeclaredSymbolError(name, line)
        raise AssertionError(kind)

    def fold_const(self, ast, env: dict[str, int], what: str) -> float:
        expr = self.lower(ast, env)
        if free_vars(expr):
            tok = self.peek()
            raise DslSyntaxError(tok.line, tok.col, what)
        try:
            return evaluate(expr, self.scalar_params)
        except (UnboundSymbolError, DomainError):
            tok = self.peek()
            raise DslSyntaxError(tok.line, tok.col, what) from None

    def fold_int(self, ast, env: dict[str, int], what: str) -> int:
        value = self.fold_const(ast, env, what)
        if value != int(value):
            tok = self.peek()
            raise DslSyntaxError(tok.line, tok.col, what)
        return int(value)

    # -- declarations and sections -------------------------------------------

    def check_fresh(self, name: str) -> None:
        if (name in self.scalar_vars or name in self.array_vars
                or name in self.scalar_params or name in self.array_params):
            raise DuplicateDeclarationError(name)

    def parse_var_decl(self, decls: list[VarDecl]) -> None:
        self.eat_keyword("var")
        name = self.expect_ident("a variable name").text
        self.check_fresh(name)
        length = 0
        if self.peek().kind == "OP" and self.peek().text == "[":
            self.next()
            tok = self.peek()
            if tok.kind != "NUMBER" or "." in tok.text or "e" in tok.text.lower():
                raise self.fail("an integer array length")
            length = int(tok.text)
            self.next()
            self.expect_op("]")
            if length < 1:
                raise BoundViolationError(f"array length must be >= 1, got {length}")
        tok = self.peek()
        if tok.kind == "IDENT" and tok.text in ("continuous", "integer", "binary"):
            kind = VarKind(tok.text)
            self.next()
        else:
            raise self.fail("a variable kind (continuous/integer/binary)")
        lb, ub = -math.inf, math.inf
        if self.at_keyword("in"):
            self.next()
            self.expect_op("[")
            lb = self.parse_signed_number()
            self.expect_op(",")
            ub = self.parse_signed_number()
            self.expect_op("]")
        if kind is VarKind.BINARY:
            if math.isinf(lb) and math.isinf(ub):
                lb, ub = 0.0, 1.0
            elif (lb, ub) != (0.0, 1.0):
                raise BoundViolationError(f"{name}: binary bounds must be [0, 1]")
        if length:
            self.array_vars[name] = length
            for k in range(1, length + 1):
                decls.append(VarDecl(f"{name}[{k}]", kind, lb, ub))
        else:
            decl = VarDecl(name, kind, lb, ub)
            self.scalar_vars[name] = decl
            decls.append(decl)

    def parse_param_decl(self) -> None:
        self.eat_keyword("param")
        name = self.expect_ident("a parameter name").text
        self.check_fresh(name)
        self.expect_op("=")
        if self.peek().kind == "OP" and self.peek().text == "[":
            self.next()
            values = [self.parse_signed_number()]
            while self.peek().kind == "OP" and self.peek().text == ",":
                self.next()
                values.append(self.parse_signed_number())
            self.expect_op("]")
            self.array_params[name] = len(values)
            for k, v in enumerate(values, start=1):
                self.scalar_params[f"{name}[{k}]"] = v
        else:
            self.scalar_params[name] = self.parse_signed_number()

    def parse_constraint(self, ineq: list[ScalarExpr], eq: list[ScalarExpr]) -> None:
        lhs_ast = self.parse_expr_ast()
        tok = self.peek()
        if tok.kind == "OP" and tok.text in ("<", ">"):
            raise DslSyntaxError(
                tok.line, tok.col, "'<=' or '>=' (strict inequalities are rejected)"
            )
        if tok.kind != "OP" or tok.text not in ("<=", ">=", "=="):
            raise self.fail("'<=', '>=' or '=='")
        rel = self.next().text
        rhs_ast = self.parse_expr_ast()
        envs: list[dict[str, int]] = [{}]
        if self.at_keyword("for"):
            self.next()
            ivar = self.expect_ident("an index variable").text
            self.eat_keyword("in")
            lo = self.fold_int(self.parse_expr_ast(), {}, "an integer range start")
            self.expect_op("..")
            hi = self.fold_int(self.parse_expr_ast(), {}, "an integer range end")
            if hi < lo:
                raise BoundViolationError(f"empty range {lo}..{hi}")
            envs = [{ivar: k} for k in range(lo, hi + 1)]
        for env in envs:
            lhs = self.lower(lhs_ast, env)
            rhs = self.lower(rhs_ast, env)
            if rel == "<=":
                ineq.append(Add((lhs, Neg(rhs))))
            elif rel == ">=":
                ineq.append(Add((rhs, Neg(lhs))))
            else:
                eq.append(Add((lhs, Neg(rhs))))

    def parse_problem(self) -> Problem:
        self.eat_keyword("problem")
        name = self.expect_ident("a problem name").text
        decls: list[VarDecl] = []
        ineq: list[ScalarExpr] = []
        eq: list[ScalarExpr] = []
        objective: ScalarExpr | None = None
        direction: Direction | None = None
        while self.peek().kind != "EOF":
            if self.at_keyword("var"):
                self.parse_var_decl(decls)
            elif self.at_keyword("param"):
                self.parse_param_decl()
            elif self.at_keyword("minimize", "maximize"):
                word = self.next().text
                if objective is not None:
                    raise DuplicateDeclarationError("objective")
                direction = Direction(word)
                objective = self.lower(self.parse_expr_ast(), {})
            elif self.at_keyword("subject"):
                self.next()
                self.eat_keyword("to")
                self.parse_constraint(ineq, eq)
                while not self.at_section_start():
                    self.parse_constraint(ineq, eq)
            else:
                raise self.fail("'var', 'param', 'minimize', 'maximize' or 'subject to'")
        if objective is None:
            tok = self.peek()
            raise DslSyntaxError(tok.line, tok.col, "an objective (minimize/maximize)")
        pb = Problem(
            name=name,
            direction=direction,
            objective=objective,
            ineq=tuple(ineq),
            eq=tuple(eq),
            variables=tuple(decls),
            parameters=dict(self.scalar_params),
        )
        pb.check_declarations()
        return pb

    def at_section_start(self) -> bool:
        tok = self.peek()
        if tok.kind == "EOF":
            return True
        return tok.kind == "IDENT" and tok.text in (
            "var", "param", "minimize", "maximize", "subject", "problem"
        )


def parse_problem(text: str | bytes) -> Problem:
    """Parse DSL source into a normalized Problem."""
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DslSyntaxError(0, 0, f"valid UTF-8 ({exc.reason})") from None
    return _Parser(text).parse_problem()
