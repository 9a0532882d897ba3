"""Arithmetic expressions for scenario-defined coefficient fields.

A small recursive-descent parser over the grammar

    expr   := term (('+' | '-') term)*
    term   := unary (('*' | '/') unary)*
    unary  := ('-' | '+') unary | power
    power  := atom ('^' unary)?          # right-associative
    atom   := NUMBER | NAME | NAME '(' expr (',' expr)* ')' | '(' expr ')'

with functions exp, ln, sin, cos, sqrt, abs, min, max and constants pi, e.
Exponentiation binds tighter than unary minus, so ``-2^2 == -4`` and
``2^3^2 == 512``.  Parsed trees are immutable; evaluation is reentrant and
accepts scalar or ndarray bindings (broadcasting applies).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping, Union

import numpy as np

__all__ = [
    "Expression",
    "ExpressionError",
    "ExpressionSyntaxError",
    "ExpressionDomainError",
    "parse",
    "evaluate",
    "to_string",
]


class ExpressionError(ValueError):
    """Base class for expression failures."""


class ExpressionSyntaxError(ExpressionError):
    """Raised at parse time; carries the character offset of the failure."""

    def __init__(self, message: str, position: int):
        super().__init__(f"{message} (at position {position})")
        self.position = position


class ExpressionDomainError(ExpressionError):
    """Raised at evaluation time: ln/sqrt of a negative value, division by zero, ..."""


# ---------------------------------------------------------------------------
# AST
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    arg: "Node"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / ^
    left: "Node"
    right: "Node"


@dataclass(frozen=True)
class Call:
    func: str
    args: tuple["Node", ...]


Node = Union[Num, Var, Neg, BinOp, Call]

_FUNCTIONS = {
    "exp": 1,
    "ln": 1,
    "sin": 1,
    "cos": 1,
    "sqrt": 1,
    "abs": 1,
    "min": 2,
    "max": 2,
}

_CONSTANTS = {"pi": math.pi, "e": math.e}


# ---------------------------------------------------------------------------
# Tokenizer
# ---------------------------------------------------------------------------

_OPERATORS = set("+-*/^(),")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    """Return (kind, value, position) triples; kind in {num, name, op}."""
    tokens = []
    i, n = 0, len(text)
    while i < n:
        c = text[i]
        if c.isspace():
            i += 1
            continue
        if c in _OPERATORS:
            tokens.append(("op", c, i))
            i += 1
            continue
        if c.isdigit() or c == ".":
            j = i
            while j < n and (text[j].isdigit() or text[j] == "."):
                j += 1
            if j < n and text[j] in "eE":
                k = j + 1
                if k < n and text[k] in "+-":
                    k += 1
                if k < n and text[k].isdigit():
                    j = k
                    while j < n and text[j].isdigit():
                        j += 1
            tok = text[i:j]
            try:
                float(tok)
            except ValueError:
                raise ExpressionSyntaxError(f"malformed number {tok!r}", i)
            tokens.append(("num", tok, i))
            i = j
            continue
        if c.isalpha() or c == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(("name", text[i:j], i))
            i = j
            continue
        raise ExpressionSyntaxError(f"unexpected character {c!r}", i)
    return tokens


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

class _Parser:
    def __init__(self, tokens: list[tuple[str, str, int]], text: str,
                 allowed_vars: frozenset[str]):
        self.tokens = tokens
        self.text = text
        self.allowed = allowed_vars
        self.pos = 0

    def _peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else None

    def _next(self):
        tok = self._peek()
        if tok is None:
            raise ExpressionSyntaxError("unexpected end of expression", len(self.text))
        self.pos += 1
        return tok

    def _expect_op(self, op: str):
        tok = self._next()
        if tok[0] != "op" or tok[1] != op:
            raise ExpressionSyntaxError(f"expected {op!r}, found {tok[1]!r}", tok[2])

    def parse(self) -> Node:
        node = self.expr()
        tok = self._peek()
        if tok is not None:
            raise ExpressionSyntaxError(f"unexpected token {tok[1]!r}", tok[2])
        return node

    def expr(self) -> Node:
        node = self.term()
        while (tok := self._peek()) and tok[0] == "op" and tok[1] in "+-":
            self.pos += 1
            node = BinOp(tok[1], node, self.term())
        return node

    def term(self) -> Node:
        node = self.unary()
        while (tok := self._peek()) and tok[0] == "op" and tok[1] in "*/":
            self.pos += 1
            node = BinOp(tok[1], node, self.unary())
        return node

    def unary(self) -> Node:
        tok = self._peek()
        if tok and tok[0] == "op" and tok[1] in "+-":
            self.pos += 1
            inner = self.unary()
            return inner if tok[1] == "+" else Neg(inner)
        return self.power()

    def power(self) -> Node:
        base = self.atom()
        tok = self._peek()
        if tok and tok[0] == "op" and tok[1] == "^":
            self.pos += 1
            # right-associative; the exponent may carry its own sign
            return BinOp("^", base, self.unary())
        return base

    def atom(self) -> Node:
        kind, value, position = self._next()
        if kind == "num":
            return Num(float(value))
        if kind == "name":
            nxt = self._peek()
            if nxt and nxt[0] == "op" and nxt[1] == "(":
                if value not in _FUNCTIONS:
                    raise ExpressionSyntaxError(f"unknown function {value!r}", position)
                self.pos += 1
                args = [self.expr()]
                while (tok := self._peek()) and tok[0] == "op" and tok[1] == ",":
                    self.pos += 1
                    args.append(self.expr())
                self._expect_op(")")
                arity = _FUNCTIONS[value]
                if len(args) != arity:
                    raise ExpressionSyntaxError(
                        f"{value} takes {arity} argument(s), got {len(args)}", position)
                return Call(value, tuple(args))
            if value in _CONSTANTS:
                return Num(_CONSTANTS[value])
            if value not in self.allowed:
                raise ExpressionSyntaxError(
                    f"unknown variable {value!r} (allowed: {sorted(self.allowed)})",
                    position)
            return Var(value)
        if kind == "op" and value == "(":
            node = self.expr()
            self._expect_op(")")
            return node
        raise ExpressionSyntaxError(f"unexpected token {value!r}", position)


# ---------------------------------------------------------------------------
# Evaluation and printing
# ---------------------------------------------------------------------------

def _eval(node: Node, env: Mapping[str, object]):
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise ExpressionDomainError(f"no binding for variable {node.name!r}")
    if isinstance(node, Neg):
        return -_eval(node.arg, env)
    if isinstance(node, BinOp):
        a = _eval(node.left, env)
        b = _eval(node.right, env)
        if node.op == "+":
            return a + b
        if node.op == "-":
            return a - b
        if node.op == "*":
            return a * b
        if node.op == "/":
            if np.any(b == 0):
                raise ExpressionDomainError("division by zero")
            return a / b
        # power: reject results that leave the reals (negative base, fractional exponent)
        with np.errstate(all="ignore"):
            out = np.power(a, b)
        if not np.all(np.isfinite(out)):
            raise ExpressionDomainError("power produced a non-finite value")
        return out
    if isinstance(node, Call):
        args = [_eval(a, env) for a in node.args]
        x = args[0]
        if node.func == "exp":
            out = np.exp(x)
            if not np.all(np.isfinite(out)):
                raise ExpressionDomainError("exp overflow")
            return out
        if node.func == "ln":
            if np.any(np.asarray(x) <= 0):
                raise ExpressionDomainError("ln of a non-positive value")
            return np.log(x)
        if node.func == "sin":
            return np.sin(x)
        if node.func == "cos":
            return np.cos(x)
        if node.func == "sqrt":
            if np.any(np.asarray(x) < 0):
                raise ExpressionDomainError("sqrt of a negative value")
            return np.sqrt(x)
        if node.func == "abs":
            return np.abs(x)
        if node.func == "min":
            return np.minimum(x, args[1])
        if node.func == "max":
            return np.maximum(x, args[1])
    raise TypeError(f"unknown node {node!r}")


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2, "neg": 3, "^": 4, "atom": 5}


def _prec(node: Node) -> int:
    if isinstance(node, (Num, Var, Call)):
        return _PREC["atom"]
    if isinstance(node, Neg):
        return _PREC["neg"]
    return _PREC[node.op]


def _fmt(node: Node) -> str:
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = _fmt(node.arg)
        if _prec(node.arg) < _PREC["neg"]:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Call):
        return f"{node.func}({', '.join(_fmt(a) for a in node.args)})"
    left, right = _fmt(node.left), _fmt(node.right)
    p = _PREC[node.op]
    if node.op == "^":
        # left operand of ^ must be atomic (so -2^2 stays -(2^2) on re-parse)
        if _prec(node.left) < _PREC["atom"]:
            left = f"({left})"
        if _prec(node.right) < _PREC["neg"]:
            right = f"({right})"
    else:
        if _prec(node.left) < p:
            left = f"({left})"
        # '-' and '/' are left-associative: parenthesize right child at equal precedence
        if _prec(node.right) < p or (_prec(node.right) == p and node.op in "-/"):
            right = f"({right})"
    return f"{left} {node.op} {right}"


def _free_vars(node: Node) -> frozenset[str]:
    if isinstance(node, Var):
        return frozenset({node.name})
    if isinstance(node, Neg):
        return _free_vars(node.arg)
    if isinstance(node, BinOp):
        return _free_vars(node.left) | _free_vars(node.right)
    if isinstance(node, Call):
        out: frozenset[str] = frozenset()
        for a in node.args:
            out |= _free_vars(a)
        return out
    return frozenset()


@dataclass(frozen=True)
class Expression:
    """An immutable parsed expression; call it with keyword bindings."""

    root: Node
    source: str
    variables: frozenset[str]

    def __call__(self, **bindings):
        return _eval(self.root, bindings)

    def free_variables(self) -> frozenset[str]:
        return _free_vars(self.root)


def parse(text: str, allowed_vars=("t", "x")) -> Expression:
    """Parse ``text`` admitting only the given variable names."""
    allowed = frozenset(allowed_vars)
    tokens = _tokenize(text)
    if not tokens:
        raise ExpressionSyntaxError("empty expression", 0)
    root = _Parser(tokens, text, allowed).parse()
    return Expression(root, text, allowed)


def evaluate(expression: Expression, bindings: Mapping[str, object]):
    """Evaluate with scalar or ndarray bindings (numpy broadcasting)."""
    return _eval(expression.root, bindings)


def to_string(expression: Expression) -> str:
    """Render back to grammar text; re-parsing reproduces the same values."""
    return _fmt(expression.root)
