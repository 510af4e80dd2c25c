"""Exact symbolic execution of parsed formulas.

Values are exact rationals (``fractions.Fraction``): the training
reward and the back-search both hinge on exact equality of results,
and division produces non-terminating decimals.  Division by zero is a
distinct outcome (an exception), never a value.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from . import symbols
from .parsing import Internal, Leaf

Value = Fraction


class DivisionByZero(ArithmeticError):
    """A division with a zero right operand; callers treat the formula
    as a wrong answer."""


def apply_operator(op: int, left: Fraction, right: Fraction) -> Fraction:
    if op == symbols.ADD:
        return left + right
    if op == symbols.SUB:
        return left - right
    if op == symbols.MUL:
        return left * right
    if op == symbols.DIV:
        if right == 0:
            raise DivisionByZero
        return left / right
    raise ValueError(f"not an operator id: {op}")


@dataclass
class ReasoningNode:
    """A parse-tree node annotated with its executed value.

    Operator leaves carry the operator id instead of a value.
    """

    source: object  # the Internal / Leaf parse node
    value: Fraction | None
    operator: int | None
    children: tuple

    @property
    def is_leaf(self) -> bool:
        return isinstance(self.source, Leaf)

    def leaf_positions(self):
        if self.is_leaf:
            return (self.source.pos,)
        out = []
        for c in self.children:
            out.extend(c.leaf_positions())
        return tuple(out)


def evaluate(tree: Internal) -> ReasoningNode:
    """Bottom-up value annotation; raises DivisionByZero on a zero divisor."""
    if isinstance(tree, Leaf):
        if symbols.is_digit(tree.symbol):
            return ReasoningNode(tree, Fraction(tree.symbol), None, ())
        return ReasoningNode(tree, None, tree.symbol, ())
    children = tuple(evaluate(c) for c in tree.children)
    if len(children) == 1:
        value = children[0].value
    elif len(children) == 3 and children[1].operator is not None:
        value = apply_operator(children[1].operator, children[0].value, children[2].value)
    else:
        raise ValueError(f"unexpected rule shape with {len(children)} children")
    return ReasoningNode(tree, value, None, children)


class NotAFormula(ValueError):
    """The symbol string is not digit/operator alternating."""


def execute_string(z) -> Fraction:
    """Execute a flat symbol string directly, without building a tree.

    Equivalent to ``evaluate(parse_string(...)).value`` for strings in
    the language (multiplicative operators bind tighter; same-level
    operators associate left); far cheaper for inner loops that only
    need the value.  Raises NotAFormula for malformed strings and
    DivisionByZero on a zero divisor.
    """
    if len(z) % 2 == 0 or any(
        symbols.is_digit(s) != (i % 2 == 0) for i, s in enumerate(z)
    ):
        raise NotAFormula(f"not a formula: {tuple(z)}")
    # first pass: fold * and / runs
    terms = [Fraction(z[0])]
    ops = []
    for i in range(1, len(z), 2):
        op, d = z[i], Fraction(z[i + 1])
        if op == symbols.MUL or op == symbols.DIV:
            terms[-1] = apply_operator(op, terms[-1], d)
        else:
            ops.append(op)
            terms.append(d)
    # second pass: fold + and - left to right
    acc = terms[0]
    for op, t in zip(ops, terms[1:]):
        acc = apply_operator(op, acc, t)
    return acc


def result(rt: ReasoningNode) -> Fraction:
    return rt.value


def format_value(v: Fraction) -> str:
    """Render as ``num/den``, or just ``num`` for integers."""
    return str(v.numerator) if v.denominator == 1 else f"{v.numerator}/{v.denominator}"


def parse_value(text: str) -> Fraction:
    return Fraction(text)
