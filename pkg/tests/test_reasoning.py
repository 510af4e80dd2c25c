"""Exact rational execution of formulas, checked against an independent
shunting-yard evaluator."""
from fractions import Fraction

import pytest

from neurosym import symbols
from neurosym.grammar import enumerate_language, load_arithmetic_grammar
from neurosym.parsing import cnf_for, parse_string
from neurosym.reasoning import (
    DivisionByZero,
    NotAFormula,
    apply_operator,
    evaluate,
    execute_string,
    format_value,
    parse_value,
    result,
)
from neurosym.symbols import from_string


def shunting_yard(z):
    """Independent oracle: classic two-stack infix evaluation."""
    prec = {symbols.ADD: 1, symbols.SUB: 1, symbols.MUL: 2, symbols.DIV: 2}
    values, ops = [], []

    def reduce_top():
        op = ops.pop()
        b, a = values.pop(), values.pop()
        values.append(apply_operator(op, a, b))

    for s in z:
        if symbols.is_digit(s):
            values.append(Fraction(s))
        else:
            while ops and prec[ops[-1]] >= prec[s]:
                reduce_top()
            ops.append(s)
    while ops:
        reduce_top()
    return values[0]


@pytest.mark.parametrize(
    "text,expected",
    [
        ("7", Fraction(7)),
        ("2+3*4", Fraction(14)),
        ("2*3+4", Fraction(10)),
        ("8/3", Fraction(8, 3)),
        ("1-2-3", Fraction(-4)),
        ("8/4/2", Fraction(1)),
        ("0*9+1", Fraction(1)),
    ],
)
def test_known_values(text, expected):
    z = from_string(text)
    cnf = cnf_for(load_arithmetic_grammar())
    assert result(evaluate(parse_string(cnf, z))) == expected
    assert execute_string(z) == expected


def test_division_by_zero_raises():
    cnf = cnf_for(load_arithmetic_grammar())
    for text in ("1/0", "3+4/0", "5/0*2"):
        z = from_string(text)
        with pytest.raises(DivisionByZero):
            evaluate(parse_string(cnf, z))
        with pytest.raises(DivisionByZero):
            execute_string(z)


def test_execute_string_rejects_malformed():
    for text in ("", "+", "1+", "12", "1++2"):
        with pytest.raises(NotAFormula):
            execute_string(from_string(text))


def test_tree_and_string_match_oracle_exhaustively():
    g = load_arithmetic_grammar()
    cnf = cnf_for(g)
    for length in (1, 3, 5):
        for z in enumerate_language(g, length):
            try:
                oracle = shunting_yard(z)
            except DivisionByZero:
                oracle = DivisionByZero
            try:
                tree_value = result(evaluate(parse_string(cnf, z)))
            except DivisionByZero:
                tree_value = DivisionByZero
            try:
                flat_value = execute_string(z)
            except DivisionByZero:
                flat_value = DivisionByZero
            assert tree_value == oracle, symbols.to_string(z)
            assert flat_value == oracle, symbols.to_string(z)


def test_values_are_exact_rationals():
    v = execute_string(from_string("1/3"))
    assert isinstance(v, Fraction)
    assert v * 3 == 1  # no floating point drift


def test_reasoning_tree_annotations():
    cnf = cnf_for(load_arithmetic_grammar())
    rt = evaluate(parse_string(cnf, from_string("2+3*4")))
    assert rt.value == 14
    leaf_ops = [n for n in _walk(rt) if n.is_leaf and n.operator is not None]
    assert sorted(n.source.symbol for n in leaf_ops) == [symbols.ADD, symbols.MUL]
    leaf_digits = [n for n in _walk(rt) if n.is_leaf and n.operator is None]
    assert sorted(n.value for n in leaf_digits) == [2, 3, 4]


def _walk(node):
    yield node
    for c in node.children:
        yield from _walk(c)


def test_apply_operator_rejects_non_operator():
    with pytest.raises(ValueError):
        apply_operator(3, Fraction(1), Fraction(2))


def test_value_formatting_round_trip():
    for v in (Fraction(7), Fraction(-3), Fraction(8, 3), Fraction(-1, 6)):
        assert parse_value(format_value(v)) == v
    assert format_value(Fraction(7)) == "7"
    assert format_value(Fraction(8, 3)) == "8/3"
