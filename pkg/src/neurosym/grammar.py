"""Context-free grammars over the symbol vocabulary.

Holds the arithmetic formula grammar, a Chomsky-Normal-Form transform
with provenance back to the source rules (so parse trees can be
reported in the source grammar's shape), CYK recognition, and a
brute-force language enumerator used as a test oracle.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from functools import lru_cache

from .symbols import sym_from_glyph, glyph

ENUMERATION_LENGTH_CAP = 7


class GrammarError(ValueError):
    pass


@dataclass(frozen=True)
class Rule:
    """A production LHS -> RHS; RHS mixes nonterminal names (str) and terminal ids (int)."""

    lhs: str
    rhs: tuple

    def __str__(self):
        parts = [glyph(x) if isinstance(x, int) else x for x in self.rhs]
        return f"{self.lhs} -> {' '.join(parts)}"


@dataclass(frozen=True)
class Grammar:
    nonterminals: frozenset
    terminals: frozenset  # symbol ids
    rules: tuple  # of Rule
    start: str

    def __post_init__(self):
        if self.start not in self.nonterminals:
            raise GrammarError(f"start symbol {self.start!r} is not a nonterminal")
        for r in self.rules:
            if r.lhs not in self.nonterminals:
                raise GrammarError(f"rule LHS {r.lhs!r} is not a nonterminal")
            for x in r.rhs:
                if isinstance(x, int):
                    if x not in self.terminals:
                        raise GrammarError(f"unknown terminal id {x} in rule {r}")
                elif x not in self.nonterminals:
                    raise GrammarError(f"unknown nonterminal {x!r} in rule {r}")


ARITHMETIC_GRAMMAR_TEXT = """\
# Arithmetic formulas over single-digit numbers.
S -> Expression
Expression -> Term
Expression -> Expression + Term
Expression -> Expression - Term
Term -> Factor
Term -> Term * Factor
Term -> Term / Factor
Factor -> 0
Factor -> 1
Factor -> 2
Factor -> 3
Factor -> 4
Factor -> 5
Factor -> 6
Factor -> 7
Factor -> 8
Factor -> 9
"""


def parse_grammar(text: str, start: str | None = None) -> Grammar:
    """Read a grammar from the plain-text rule list format.

    One production per line, ``LHS -> RHS1 RHS2 ...``; ``#`` starts a
    comment.  A token is a terminal iff it is a single symbol glyph;
    anything else is a nonterminal.  The start symbol defaults to the
    LHS of the first rule.
    """
    rules = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "->" not in line:
            raise GrammarError(f"line {lineno}: expected 'LHS -> RHS', got {line!r}")
        lhs, rhs_text = line.split("->", 1)
        lhs = lhs.strip()
        rhs = []
        for tok in rhs_text.split():
            try:
                rhs.append(sym_from_glyph(tok))
            except ValueError:
                rhs.append(tok)
        rules.append(Rule(lhs, tuple(rhs)))
    if not rules:
        raise GrammarError("no rules")
    nonterminals = frozenset(r.lhs for r in rules)
    for r in rules:
        for x in r.rhs:
            if isinstance(x, str) and x not in nonterminals:
                raise GrammarError(f"nonterminal {x!r} never appears as a LHS")
    terminals = frozenset(x for r in rules for x in r.rhs if isinstance(x, int))
    return Grammar(nonterminals, terminals, tuple(rules), start or rules[0].lhs)


def format_grammar(g: Grammar) -> str:
    return "\n".join(str(r) for r in g.rules) + "\n"


@lru_cache(maxsize=None)
def load_arithmetic_grammar() -> Grammar:
    """The built-in arithmetic grammar: 4 nonterminals, 17 rules."""
    return parse_grammar(ARITHMETIC_GRAMMAR_TEXT, start="S")


# ---------------------------------------------------------------------------
# Chomsky Normal Form


@dataclass(frozen=True)
class CnfRule:
    """A CNF rule with provenance back to the source grammar.

    ``rhs`` is a pair of nonterminal ids (binary) or a single terminal
    id (lexical).  ``unit_chain`` lists the source unit-rule ids that
    were collapsed above this rule; ``source`` is the source rule id
    realized here (None for synthetic pieces: terminal wrappers and
    the inner links of a right-branching split); ``part`` is 0 for the
    top piece of a split source rule and >0 for inner links.
    """

    lhs: int
    rhs: tuple
    lexical: bool
    unit_chain: tuple = ()
    source: int | None = None
    part: int = 0


@dataclass
class CnfGrammar:
    source: Grammar
    nt_names: tuple  # nonterminal id -> name
    start: int
    rules: tuple  # of CnfRule
    _tables: object = field(default=None, repr=False, compare=False)

    @property
    def lexical_rules(self):
        return [r for r in self.rules if r.lexical]

    @property
    def binary_rules(self):
        return [r for r in self.rules if not r.lexical]

    def tables(self):
        """Flat integer arrays consumed by the CYK kernels (cached)."""
        if self._tables is None:
            import numpy as np

            lex = sorted(
                (i for i, r in enumerate(self.rules) if r.lexical),
                key=lambda i: (self.rules[i].rhs[0], i),
            )
            binr = [i for i, r in enumerate(self.rules) if not r.lexical]
            self._tables = {
                "n_nt": len(self.nt_names),
                "lex_idx": np.array(lex, dtype=np.int32),
                "lex_lhs": np.array([self.rules[i].lhs for i in lex], dtype=np.int32),
                "lex_term": np.array([self.rules[i].rhs[0] for i in lex], dtype=np.int32),
                "bin_idx": np.array(binr, dtype=np.int32),
                "bin_lhs": np.array([self.rules[i].lhs for i in binr], dtype=np.int32),
                "bin_b": np.array([self.rules[i].rhs[0] for i in binr], dtype=np.int32),
                "bin_c": np.array([self.rules[i].rhs[1] for i in binr], dtype=np.int32),
            }
        return self._tables


def binarize(g: Grammar) -> CnfGrammar:
    """Standard CNF transform (TERM, BIN, unit collapse) with provenance.

    Rejects grammars with empty productions.  Fresh nonterminal names
    are deterministic given rule order.
    """
    for i, r in enumerate(g.rules):
        if len(r.rhs) == 0:
            raise GrammarError(f"empty production not supported: rule {i} ({r})")

    nt_ids: dict[str, int] = {}

    def nt(name: str) -> int:
        if name not in nt_ids:
            nt_ids[name] = len(nt_ids)
        return nt_ids[name]

    for name in sorted(g.nonterminals):
        nt(name)

    # Wrap terminals that occur in long RHSs; split long rules.  Unit
    # rules (A -> B) are collected for collapsing afterwards.
    pre_rules: list[CnfRule] = []  # binary/lexical, before unit collapse
    unit_rules: list[tuple[int, str, str]] = []  # (source id, A, B)
    wrapper_done: set[int] = set()

    def wrap_terminal(t: int) -> int:
        wid = nt(f"_t{t}")
        if t not in wrapper_done:
            wrapper_done.add(t)
            pre_rules.append(CnfRule(wid, (t,), True))
        return wid

    for i, r in enumerate(g.rules):
        if len(r.rhs) == 1:
            x = r.rhs[0]
            if isinstance(x, int):
                pre_rules.append(CnfRule(nt(r.lhs), (x,), True, source=i))
            else:
                unit_rules.append((i, r.lhs, x))
            continue
        ids = [wrap_terminal(x) if isinstance(x, int) else nt(x) for x in r.rhs]
        lhs = nt(r.lhs)
        for k in range(len(ids) - 2):
            inner = nt(f"_b{i}_{k}")
            pre_rules.append(CnfRule(lhs, (ids[k], inner), False, source=i, part=k))
            lhs = inner
        pre_rules.append(
            CnfRule(lhs, (ids[-2], ids[-1]), False, source=i, part=len(ids) - 2)
        )

    # Unit closure: chains A =unit=> ... =unit=> B, recorded as the source
    # rule ids along the chain.
    closure: dict[str, dict[str, tuple]] = {a: {a: ()} for a in g.nonterminals}
    changed = True
    while changed:
        changed = False
        for i, a, b in unit_rules:
            for target, chain in list(closure.get(b, {}).items()):
                new_chain = (i,) + chain
                if target not in closure[a] or len(new_chain) < len(closure[a][target]):
                    if target != a or new_chain == ():
                        closure[a][target] = new_chain
                        changed = True

    # The top pieces of split rules (part == 0 with a source, or lexical
    # with a source) get copies for every nonterminal that unit-derives
    # their LHS.  Synthetic pieces are never unit targets.
    by_lhs: dict[int, list[CnfRule]] = {}
    for r in pre_rules:
        by_lhs.setdefault(r.lhs, []).append(r)

    rules: list[CnfRule] = []
    seen = set()

    def emit(rule: CnfRule):
        key = (rule.lhs, rule.rhs, rule.lexical, rule.unit_chain, rule.source, rule.part)
        if key not in seen:
            seen.add(key)
            rules.append(rule)

    for a in sorted(g.nonterminals, key=nt_ids.get):
        for b, chain in sorted(closure[a].items(), key=lambda kv: len(kv[1])):
            for r in by_lhs.get(nt_ids.get(b, -1), []):
                if r.part != 0 and chain:
                    continue  # inner links keep their synthetic LHS only
                if chain and r.source is None:
                    continue  # terminal wrappers are not unit targets
                emit(
                    CnfRule(
                        nt_ids[a], r.rhs, r.lexical,
                        unit_chain=chain, source=r.source, part=r.part,
                    )
                )
    # Synthetic rules (wrappers + inner links) pass through unchanged.
    for r in pre_rules:
        if r.source is None or r.part != 0:
            emit(r)

    names = tuple(sorted(nt_ids, key=nt_ids.get))
    cnf = CnfGrammar(g, names, nt_ids[g.start], tuple(rules))
    if not any(True for _ in cnf.binary_rules) and not any(True for _ in cnf.lexical_rules):
        raise GrammarError("binarization produced no rules")
    return cnf


def accepts(cnf: CnfGrammar, z) -> bool:
    """CYK recognition: is z in the language of the grammar?"""
    l = len(z)
    if l == 0:
        return False
    n = len(cnf.nt_names)
    chart = [[set() for _ in range(l + 1)] for _ in range(l)]
    lex = cnf.lexical_rules
    binr = cnf.binary_rules
    for i, t in enumerate(z):
        cell = chart[i][i + 1]
        for r in lex:
            if r.rhs[0] == t:
                cell.add(r.lhs)
    for span in range(2, l + 1):
        for start in range(l - span + 1):
            end = start + span
            cell = chart[start][end]
            for split in range(start + 1, end):
                left, right = chart[start][split], chart[split][end]
                if not left or not right:
                    continue
                for r in binr:
                    if r.rhs[0] in left and r.rhs[1] in right:
                        cell.add(r.lhs)
    return cnf.start in chart[0][l]


@lru_cache(maxsize=32)
def enumerate_language(g: Grammar, length: int) -> tuple:
    """All strings of exactly ``length`` accepted by g, lexicographic.

    Brute-force derivation enumeration; guarded by a length cap.
    """
    if length > ENUMERATION_LENGTH_CAP:
        raise ValueError(f"length {length} exceeds enumeration cap {ENUMERATION_LENGTH_CAP}")
    if length < 1:
        return ()

    by_lhs: dict[str, list[Rule]] = {}
    for r in g.rules:
        by_lhs.setdefault(r.lhs, []).append(r)

    memo: dict[tuple, frozenset] = {}

    def derive(sym, n) -> frozenset:
        if isinstance(sym, int):
            return frozenset({(sym,)}) if n == 1 else frozenset()
        key = (sym, n)
        if key in memo:
            return memo[key]
        memo[key] = frozenset()  # cycle guard: unit cycles add nothing new per pass
        out = set()
        for r in by_lhs.get(sym, []):
            out.update(_derive_seq(r.rhs, n))
        # iterate to a fixed point for unit-rule cycles
        prev = memo[key]
        memo[key] = frozenset(out)
        while memo[key] != prev:
            prev = memo[key]
            out = set()
            for r in by_lhs.get(sym, []):
                out.update(_derive_seq(r.rhs, n))
            memo[key] = frozenset(out)
        return memo[key]

    def _derive_seq(seq, n) -> set:
        if not seq:
            return {()} if n == 0 else set()
        if len(seq) == 1:
            return set(derive(seq[0], n))
        out = set()
        head, rest = seq[0], seq[1:]
        min_rest = len(rest)  # no empty productions
        for k in range(1, n - min_rest + 1):
            heads = derive(head, k)
            if not heads:
                continue
            tails = _derive_seq(rest, n - k)
            for h, t in itertools.product(heads, tails):
                out.add(h + t)
        return out

    return tuple(sorted(derive(g.start, length)))
