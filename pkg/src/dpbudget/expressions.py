"""Arithmetic expressions over statistic references: parse, print, evaluate.

The surface grammar is plain infix arithmetic:

    expr   := term (("+" | "-") term)*
    term   := factor (("*" | "/") factor)*
    factor := NUMBER | IDENT | "-" factor | "(" expr ")"

Operators are left-associative, "*" and "/" bind tighter than "+" and "-",
and IDENT matches ``[A-Za-z_][A-Za-z0-9_]*``.
"""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass
from typing import Mapping

import numpy as np

from .errors import DivisionNearZeroError, ExpressionParseError, MissingValueError

# Denominators at or below this magnitude are treated as division by zero.
DIVISION_GUARD = 1e-12


class BinaryOp(enum.Enum):
    ADD = "+"
    SUB = "-"
    MUL = "*"
    DIV = "/"


class Expr:
    """Base class for expression nodes. Trees are immutable once built."""


@dataclass(frozen=True)
class Constant(Expr):
    value: float


@dataclass(frozen=True)
class StatRef(Expr):
    name: str


@dataclass(frozen=True)
class Negate(Expr):
    operand: Expr


@dataclass(frozen=True)
class Binary(Expr):
    op: BinaryOp
    left: Expr
    right: Expr


_NUMBER_RE = r"(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][+-]?\d+)?"
_IDENT_RE = r"[A-Za-z_][A-Za-z0-9_]*"
_TOKEN_RE = re.compile(rf"(?P<number>{_NUMBER_RE})|(?P<ident>{_IDENT_RE})|(?P<punct>[+\-*/()])")

_FACTOR_EXPECTED = ("number", "identifier", "'-'", "'('")


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    size = len(text)
    while pos < size:
        if text[pos].isspace():
            pos += 1
            continue
        match = _TOKEN_RE.match(text, pos)
        if match is None:
            raise ExpressionParseError(pos, _FACTOR_EXPECTED, f"unexpected character {text[pos]!r}")
        tokens.append((match.lastgroup, match.group(), pos))
        pos = match.end()
    tokens.append(("end", "", size))
    return tokens


class _Parser:
    def __init__(self, tokens: list[tuple[str, str, int]]):
        self.tokens = tokens
        self.pos = 0

    def peek(self) -> tuple[str, str, int]:
        return self.tokens[self.pos]

    def advance(self) -> tuple[str, str, int]:
        token = self.tokens[self.pos]
        self.pos += 1
        return token

    def parse(self) -> Expr:
        node = self.expr()
        kind, text, offset = self.peek()
        if kind != "end":
            raise ExpressionParseError(
                offset, ("'+'", "'-'", "'*'", "'/'", "end of input"), f"unexpected {text!r}"
            )
        return node

    def expr(self) -> Expr:
        node = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "punct" and text in "+-":
                self.advance()
                node = Binary(BinaryOp(text), node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "punct" and text in "*/":
                self.advance()
                node = Binary(BinaryOp(text), node, self.factor())
            else:
                return node

    def factor(self) -> Expr:
        kind, text, offset = self.advance()
        if kind == "number":
            value = float(text)
            if not math.isfinite(value):
                raise ExpressionParseError(offset, ("number",), f"numeric literal {text!r} out of range")
            return Constant(value)
        if kind == "ident":
            return StatRef(text)
        if kind == "punct" and text == "-":
            return Negate(self.factor())
        if kind == "punct" and text == "(":
            node = self.expr()
            kind2, text2, offset2 = self.peek()
            if not (kind2 == "punct" and text2 == ")"):
                raise ExpressionParseError(offset2, ("')'",), f"unexpected {text2 or 'end of input'!r}")
            self.advance()
            return node
        raise ExpressionParseError(offset, _FACTOR_EXPECTED, f"unexpected {text or 'end of input'!r}")


def parse_expression(text: str) -> Expr:
    """Parses infix arithmetic over statistic ids into an expression tree.

    Raises:
        ExpressionParseError: with the character offset of the failure and
            the token kinds that would have been accepted there.
    """
    return _Parser(_tokenize(text)).parse()


_PREC_ADD = 1
_PREC_MUL = 2
_PREC_ATOM = 3


def _precedence(node: Expr) -> int:
    if isinstance(node, Binary):
        return _PREC_ADD if node.op in (BinaryOp.ADD, BinaryOp.SUB) else _PREC_MUL
    return _PREC_ATOM


def format_expression(node: Expr) -> str:
    """Renders a tree as canonical text with minimal parentheses.

    ``parse_expression(format_expression(tree))`` reproduces the tree
    structurally for every tree the parser can produce (in particular,
    constants are nonnegative; signs live in Negate nodes).
    """
    if isinstance(node, Constant):
        return repr(node.value)
    if isinstance(node, StatRef):
        return node.name
    if isinstance(node, Negate):
        inner = format_expression(node.operand)
        if _precedence(node.operand) < _PREC_ATOM:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, Binary):
        prec = _precedence(node)
        left = format_expression(node.left)
        if _precedence(node.left) < prec:
            left = f"({left})"
        right = format_expression(node.right)
        if _precedence(node.right) <= prec:
            right = f"({right})"
        return f"{left} {node.op.value} {right}"
    raise TypeError(f"not an expression node: {node!r}")


def free_statistics(node: Expr) -> set[str]:
    """Returns the set of statistic ids referenced anywhere in the tree."""
    if isinstance(node, Constant):
        return set()
    if isinstance(node, StatRef):
        return {node.name}
    if isinstance(node, Negate):
        return free_statistics(node.operand)
    if isinstance(node, Binary):
        return free_statistics(node.left) | free_statistics(node.right)
    raise TypeError(f"not an expression node: {node!r}")


def evaluate(node: Expr, values: Mapping[str, float]) -> float:
    """Evaluates the tree at the given statistic values.

    Raises:
        MissingValueError: a referenced id has no entry in ``values``.
        DivisionNearZeroError: a denominator magnitude fell below
            ``DIVISION_GUARD``.
    """
    if isinstance(node, Constant):
        return node.value
    if isinstance(node, StatRef):
        try:
            return float(values[node.name])
        except KeyError:
            raise MissingValueError(node.name) from None
    if isinstance(node, Negate):
        return -evaluate(node.operand, values)
    if isinstance(node, Binary):
        left = evaluate(node.left, values)
        right = evaluate(node.right, values)
        if node.op is BinaryOp.ADD:
            return left + right
        if node.op is BinaryOp.SUB:
            return left - right
        if node.op is BinaryOp.MUL:
            return left * right
        if abs(right) < DIVISION_GUARD:
            raise DivisionNearZeroError(f"denominator {right!r} is within {DIVISION_GUARD} of zero")
        return left / right
    raise TypeError(f"not an expression node: {node!r}")


def evaluate_batch(node: Expr, values: Mapping[str, np.ndarray], invalid: np.ndarray):
    """Vectorized evaluation over sample arrays.

    Samples whose denominators come within DIVISION_GUARD of zero are
    flagged in ``invalid`` (a boolean array the caller owns) and computed
    with a substitute denominator of 1.0 so the rest of the batch survives.
    Returns an array, or a scalar when the tree is constant.
    """
    if isinstance(node, Constant):
        return node.value
    if isinstance(node, StatRef):
        try:
            return values[node.name]
        except KeyError:
            raise MissingValueError(node.name) from None
    if isinstance(node, Negate):
        return -evaluate_batch(node.operand, values, invalid)
    if isinstance(node, Binary):
        left = evaluate_batch(node.left, values, invalid)
        right = evaluate_batch(node.right, values, invalid)
        if node.op is BinaryOp.ADD:
            return left + right
        if node.op is BinaryOp.SUB:
            return left - right
        if node.op is BinaryOp.MUL:
            return left * right
        if np.ndim(right) == 0:
            if abs(right) < DIVISION_GUARD:
                invalid[:] = True
                right = 1.0
        else:
            near_zero = np.abs(right) < DIVISION_GUARD
            if near_zero.any():
                invalid |= near_zero
                right = np.where(near_zero, 1.0, right)
        return left / right
    raise TypeError(f"not an expression node: {node!r}")
