"""The 14-symbol vocabulary: digits 0-9 and the four arithmetic operators.

Symbol ids are fixed everywhere: 0-9 are the digits, 10-13 are + - * /
in that order.  Probability matrices, serialized strings, and grammar
terminals all use this ordering.
"""
from __future__ import annotations

NUM_SYMBOLS = 14

DIGITS = tuple(range(10))
OPERATORS = (10, 11, 12, 13)
ADD, SUB, MUL, DIV = OPERATORS

GLYPHS = "0123456789+-*/"
# Unicode spellings accepted on input, normalized to the ASCII glyphs.
_ALIASES = {"−": "-", "×": "*", "÷": "/"}

_GLYPH_TO_ID = {g: i for i, g in enumerate(GLYPHS)}

# A symbol string is a plain tuple of symbol ids.
SymbolString = tuple


def is_digit(sym: int) -> bool:
    return 0 <= sym <= 9


def is_operator(sym: int) -> bool:
    return 10 <= sym <= 13


def category(sym: int) -> str:
    if is_digit(sym):
        return "digit"
    if is_operator(sym):
        return "operator"
    raise ValueError(f"not a symbol id: {sym}")


def glyph(sym: int) -> str:
    if not 0 <= sym < NUM_SYMBOLS:
        raise ValueError(f"not a symbol id: {sym}")
    return GLYPHS[sym]


def sym_from_glyph(ch: str) -> int:
    ch = _ALIASES.get(ch, ch)
    try:
        return _GLYPH_TO_ID[ch]
    except KeyError:
        raise ValueError(f"unknown symbol glyph: {ch!r}") from None


def to_string(symbols) -> str:
    return "".join(glyph(s) for s in symbols)


def from_string(text: str) -> SymbolString:
    return tuple(sym_from_glyph(ch) for ch in text)
