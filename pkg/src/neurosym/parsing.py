"""Grammar-constrained decoding of per-position symbol distributions.

``viterbi_parse`` finds the most probable grammar-valid string under a
row-stochastic probability matrix via max-product CYK over the CNF
grammar, then de-binarizes the chart derivation back to the source
grammar's tree shape.  ``constrained_sample`` draws valid strings
left-to-right through per-prefix feasibility masks.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import _kernels
from .grammar import CnfGrammar, Grammar, binarize

ROW_SUM_TOL = 1e-9
NEG_INF = -np.inf


class InvalidProbMatrix(ValueError):
    pass


def check_prob_matrix(pm: np.ndarray) -> np.ndarray:
    pm = np.asarray(pm, dtype=np.float64)
    if pm.ndim != 2 or pm.shape[0] < 1 or pm.shape[1] != 14:
        raise InvalidProbMatrix(f"expected (l, 14) matrix, got shape {pm.shape}")
    if np.any(pm < 0):
        raise InvalidProbMatrix("negative probability entry")
    if np.any(np.abs(pm.sum(axis=1) - 1.0) > ROW_SUM_TOL):
        raise InvalidProbMatrix("rows must sum to 1")
    return pm


@dataclass(frozen=True)
class Leaf:
    pos: int
    symbol: int

    @property
    def span(self):
        return (self.pos, self.pos + 1)


@dataclass(frozen=True)
class Internal:
    rule_id: int  # index into the source grammar's rule list
    lhs: str
    children: tuple
    span: tuple

    def leaves(self):
        out = []
        stack = [self]
        while stack:
            node = stack.pop()
            if isinstance(node, Leaf):
                out.append(node)
            else:
                stack.extend(reversed(node.children))
        return out


def tree_string(tree: Internal):
    """The symbol string spelled by the tree's leaves."""
    return tuple(leaf.symbol for leaf in tree.leaves())


@lru_cache(maxsize=None)
def cnf_for(g: Grammar) -> CnfGrammar:
    return binarize(g)


def _build_derivation(cnf, score, bp_rule, bp_split, start, end, nt):
    """Reconstruct the CNF derivation from backpointers, then map it to
    the source grammar using rule provenance."""
    tabs = cnf.tables()
    r = bp_rule[start, end, nt]
    if end - start == 1:
        rule = cnf.rules[tabs["lex_idx"][r]]
        return (rule, Leaf(start, rule.rhs[0]))
    rule = cnf.rules[tabs["bin_idx"][r]]
    split = bp_split[start, end, nt]
    left = _build_derivation(cnf, score, bp_rule, bp_split, start, split, rule.rhs[0])
    right = _build_derivation(cnf, score, bp_rule, bp_split, split, end, rule.rhs[1])
    return (rule, left, right)


def _debinarize(cnf, deriv) -> Internal:
    rule = deriv[0]
    src = cnf.source

    def collect(d):
        # Gather the source rule's children across the right-branching
        # inner links created by the CNF split.
        r = d[0]
        if r.source == rule.source and r.part > 0 and not r.unit_chain:
            return [to_child(d[1])] + collect(d[2])
        return [to_child(d)]

    def to_child(d):
        r = d[0]
        if r.lexical and r.source is None:
            return d[1]  # terminal wrapper -> plain leaf
        return _debinarize(cnf, d)

    if rule.lexical:
        leaf = deriv[1]
        node = Internal(rule.source, src.rules[rule.source].lhs, (leaf,), leaf.span)
    else:
        children = [to_child(deriv[1])] + collect(deriv[2])
        span = (children[0].span[0], children[-1].span[1])
        node = Internal(rule.source, src.rules[rule.source].lhs, tuple(children), span)
    for unit_id in reversed(rule.unit_chain):
        node = Internal(unit_id, src.rules[unit_id].lhs, (node,), node.span)
    return node


def viterbi_parse(cnf: CnfGrammar, pm):
    """Most probable grammar-valid string of length l under pm.

    Returns (string, source-grammar ParseTree, log score), or None when
    no string of this length is in the language.
    """
    pm = check_prob_matrix(pm)
    with np.errstate(divide="ignore"):
        logpm = np.log(pm)
    return _viterbi_log(cnf, logpm)


def _viterbi_log(cnf: CnfGrammar, logpm):
    tabs = cnf.tables()
    score, bp_rule, bp_split = _kernels.viterbi_chart(
        np.ascontiguousarray(logpm),
        tabs["n_nt"], tabs["lex_lhs"], tabs["lex_term"],
        tabs["bin_lhs"], tabs["bin_b"], tabs["bin_c"],
    )
    l = logpm.shape[0]
    best = score[0, l, cnf.start]
    if best == NEG_INF:
        return None
    deriv = _build_derivation(cnf, score, bp_rule, bp_split, 0, l, cnf.start)
    tree = _debinarize(cnf, deriv)
    return tree_string(tree), tree, float(best)


def parse_string(cnf: CnfGrammar, z) -> Internal | None:
    """Parse a concrete symbol string; None if it is not in the language."""
    l = len(z)
    logpm = np.full((l, 14), NEG_INF)
    logpm[np.arange(l), list(z)] = 0.0
    result = _viterbi_log(cnf, logpm)
    return None if result is None else result[1]


# ---------------------------------------------------------------------------
# Feasibility masks and constrained sampling


FEASIBILITY_LENGTH_CAP = 7


class FeasibilityMasks:
    """Deterministic automaton over prefixes of fixed-length valid strings.

    A symbol is admissible at position i iff some completion of the
    prefix to the target length lies in the language.  States are sets
    of pending right-hand-side suffixes from leftmost derivations,
    expanded until a terminal leads and pruned by derivable-length
    bookkeeping, so the automaton stays small without enumerating the
    language.
    """

    def __init__(self, g: Grammar, length: int):
        if length > FEASIBILITY_LENGTH_CAP:
            raise ValueError(
                f"length {length} exceeds feasibility cap {FEASIBILITY_LENGTH_CAP}"
            )
        self.grammar = g
        self.length = length
        self._by_lhs = {}
        for r in g.rules:
            self._by_lhs.setdefault(r.lhs, []).append(r)
        self._lengths = self._derivable_lengths(length)
        self._trans: dict = {}  # (state, remaining, symbol) -> state
        self._adm: dict = {}  # (state, remaining) -> admissible tuple
        self._start = self._expand(frozenset({(g.start,)}), length)
        if not self._admissible_at(self._start, length):
            raise ValueError(f"no valid strings of length {length}")

    def _derivable_lengths(self, cap):
        lengths = {t: frozenset({1}) for t in self.grammar.terminals}
        for a in self.grammar.nonterminals:
            lengths[a] = frozenset()
        changed = True
        while changed:
            changed = False
            for a, rules in self._by_lhs.items():
                out = set(lengths[a])
                for r in rules:
                    sums = {0}
                    for x in r.rhs:
                        sums = {
                            s + n for s in sums for n in lengths[x] if s + n <= cap
                        }
                    out.update(sums)
                if out != set(lengths[a]):
                    lengths[a] = frozenset(out)
                    changed = True
        return lengths

    def _seq_can_derive(self, seq, n) -> bool:
        sums = {0}
        for x in seq:
            sums = {s + m for s in sums for m in self._lengths[x] if s + m <= n}
            if not sums:
                return False
        return n in sums

    def _expand(self, seqs, remaining) -> frozenset:
        """Leftmost-expand pending suffixes until a terminal leads."""
        out = set()
        seen = set()
        stack = list(seqs)
        while stack:
            seq = stack.pop()
            if seq in seen or not self._seq_can_derive(seq, remaining):
                continue
            seen.add(seq)
            if not seq:
                continue
            head = seq[0]
            if isinstance(head, int):
                out.add(seq)
            else:
                for r in self._by_lhs.get(head, []):
                    stack.append(r.rhs + seq[1:])
        return frozenset(out)

    def _admissible_at(self, state, remaining) -> tuple:
        key = (state, remaining)
        if key not in self._adm:
            syms = {
                seq[0]
                for seq in state
                if self._seq_can_derive(seq[1:], remaining - 1)
            }
            self._adm[key] = tuple(sorted(syms))
        return self._adm[key]

    def _step(self, state, remaining, sym) -> frozenset:
        key = (state, remaining, sym)
        if key not in self._trans:
            rests = {
                seq[1:]
                for seq in state
                if seq[0] == sym and self._seq_can_derive(seq[1:], remaining - 1)
            }
            self._trans[key] = self._expand(rests, remaining - 1)
        return self._trans[key]

    def admissible(self, prefix) -> tuple:
        """Admissible symbol ids after ``prefix`` (sorted); empty if the
        prefix cannot be completed."""
        prefix = tuple(prefix)
        if len(prefix) >= self.length:
            return ()
        state = self._start
        remaining = self.length
        for sym in prefix:
            if sym not in self._admissible_at(state, remaining):
                return ()
            state = self._step(state, remaining, sym)
            remaining -= 1
        return self._admissible_at(state, remaining)


@lru_cache(maxsize=None)
def feasibility_masks(g: Grammar, length: int) -> FeasibilityMasks:
    return FeasibilityMasks(g, length)


def constrained_sample(g: Grammar, pm, rng) -> tuple:
    """Sample a grammar-valid string left-to-right, renormalizing each pm
    row over the admissible symbols for the current prefix."""
    pm = check_prob_matrix(pm)
    masks = feasibility_masks(g, pm.shape[0])
    prefix: tuple = ()
    for i in range(pm.shape[0]):
        allowed = masks.admissible(prefix)
        if not allowed:
            raise RuntimeError(f"prefix {prefix} admits no completion")
        weights = pm[i, list(allowed)]
        total = weights.sum()
        if total <= 0.0:
            probs = np.full(len(allowed), 1.0 / len(allowed))
        else:
            probs = weights / total
        prefix = prefix + (allowed[int(rng.choice(len(allowed), p=probs))],)
    return prefix
