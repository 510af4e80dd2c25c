"""Back-search: top-down error correction through the reasoning tree.

``one_step_backsearch`` finds the highest-priority single-symbol
substitution that makes the formula execute to the desired answer,
using a best-first priority queue seeded at the root.  Priorities are
probability ratios under the perception output; a subtree's priority
upper-bounds every substitution beneath it (row probabilities sum to
1), so the first terminal popped is globally optimal.

``multi_step_backsearch`` wraps the one-step search and a
same-category random walk into a Metropolis-Hastings sampler whose
stationary distribution (at mix weight 0) is the perception product
over grammar-valid strings.
"""
from __future__ import annotations

import heapq
import itertools
import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from . import symbols
from functools import lru_cache

from .parsing import parse_string
from .reasoning import (
    DivisionByZero,
    NotAFormula,
    ReasoningNode,
    apply_operator,
    evaluate,
    execute_string,
)

_PROB_FLOOR = 1e-300  # guards ratio denominators against exact zeros


@dataclass(frozen=True)
class MbsConfig:
    """Multi-step back-search hyperparameters."""

    steps: int = 10  # T
    mix: float = 0.5  # lambda: probability of proposing the 1-step search
    walk_mean: float = 1.0  # beta: Poisson mean of the random-walk distance

    def __post_init__(self):
        if not 0.0 < self.mix < 1.0:
            raise ValueError("mix must be in (0, 1)")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.walk_mean <= 0.0:
            raise ValueError("walk_mean must be > 0")


@dataclass(frozen=True)
class Correction:
    """A queued change: set ``node`` to ``expected`` (a Value, or an
    operator id for operator leaves), with visiting priority."""

    node: ReasoningNode
    expected: object
    priority: float


def subtree_prob(node: ReasoningNode, pm) -> float:
    """Product of perception probabilities of all leaves under the node."""
    p = 1.0
    for leaf in _iter_leaves(node):
        p *= pm[leaf.source.pos, leaf.source.symbol]
    return p


def _iter_leaves(node: ReasoningNode):
    if node.is_leaf:
        yield node
        return
    for c in node.children:
        yield from _iter_leaves(c)


def priority(node: ReasoningNode, alpha, pm) -> float:
    """Probability-ratio priority of changing ``node`` to ``alpha``."""
    if node.is_leaf:
        pos = node.source.pos
        cur = max(pm[pos, node.source.symbol], _PROB_FLOOR)
        new_sym = alpha if isinstance(alpha, int) else int(alpha)
        return pm[pos, new_sym] / cur
    p = max(subtree_prob(node, pm), _PROB_FLOOR)
    return (1.0 - p) / p


def solve(child: ReasoningNode, parent: ReasoningNode, alpha):
    """Expected values for ``child`` that make ``parent`` reach ``alpha``.

    Returns a list of (child, expected) candidates; impossible changes
    are discarded, never raised.  For a unit rule the value is copied
    down; for a binary rule the equation is solved for the left/right
    operand; for the operator leaf every other operator is tried.
    """
    kids = parent.children
    if len(kids) == 1:
        return _filter_value_candidate(child, alpha)
    left, op_leaf, right = kids
    if child is op_leaf:
        out = []
        for op in symbols.OPERATORS:
            if op == op_leaf.operator:
                continue
            try:
                if apply_operator(op, left.value, right.value) == alpha:
                    out.append((child, op))
            except DivisionByZero:
                pass
        return out
    op = op_leaf.operator
    if child is left:
        other = right.value
        if op == symbols.ADD:
            want = alpha - other
        elif op == symbols.SUB:
            want = alpha + other
        elif op == symbols.MUL:
            if other == 0:
                return []  # alpha != current value 0, so no left value works
            want = alpha / other
        else:  # DIV; other != 0 or the tree would not have evaluated
            want = alpha * other
    else:
        other = left.value
        if op == symbols.ADD:
            want = alpha - other
        elif op == symbols.SUB:
            want = other - alpha
        elif op == symbols.MUL:
            if other == 0:
                return []
            want = alpha / other
        else:  # DIV: other / want = alpha
            if alpha == 0 or other == 0:
                return []  # unreachable, or would introduce a zero divisor
            want = other / alpha
    return _filter_value_candidate(child, want)


def _filter_value_candidate(child: ReasoningNode, want):
    if child.is_leaf or child.operator is None:
        if child.value == want:
            return []  # no-op change cannot fix the root
    if child.is_leaf:
        # digit leaf: the target must itself be a digit
        if want.denominator != 1 or not 0 <= want.numerator <= 9:
            return []
    return [(child, want)]


def one_step_backsearch(rt: ReasoningNode, y: Fraction, pm):
    """Best-first search for a single-symbol correction executing to y.

    Returns the corrected symbol string, or None when no such
    correction exists.  Ties in priority break by insertion order.

    Digit substitutions are found by propagating expected values down
    the reasoning tree (a digit swap never changes the parse shape).
    Operator substitutions are validated by re-executing the modified
    string instead: swapping an operator across precedence classes
    restructures the parse, so the tree-local equation over the old
    operand subtrees is neither sound nor complete for them.
    """
    y = Fraction(y)
    z = tuple(_original_string(rt))
    probs = _subtree_probs(rt, pm)
    counter = itertools.count()
    heap = []
    for pos in range(1, len(z), 2):
        cur = z[pos]
        for op in symbols.OPERATORS:
            if op == cur:
                continue
            cand = z[:pos] + (op,) + z[pos + 1 :]
            try:
                if execute_string(cand) != y:
                    continue
            except DivisionByZero:
                continue
            prio = pm[pos, op] / max(pm[pos, cur], _PROB_FLOOR)
            heapq.heappush(heap, (-prio, next(counter), ("swap", cand), None))
    heapq.heappush(heap, (-math.inf, next(counter), rt, y))
    while heap:
        _, _, node, alpha = heapq.heappop(heap)
        if isinstance(node, tuple):
            return node[1]
        if node.is_leaf:
            pos = node.source.pos
            z_star = list(z)
            z_star[pos] = alpha if isinstance(alpha, int) else int(alpha)
            return tuple(z_star)
        for child in node.children:
            if child.is_leaf and child.operator is not None:
                continue  # operator swaps were queued up front
            for c, want in solve(child, node, alpha):
                if c.is_leaf:
                    pos = c.source.pos
                    cur = max(pm[pos, c.source.symbol], _PROB_FLOOR)
                    prio = pm[pos, int(want)] / cur
                else:
                    p = max(probs[id(c)], _PROB_FLOOR)
                    prio = (1.0 - p) / p
                heapq.heappush(heap, (-prio, next(counter), c, want))
    return None


def _subtree_probs(rt: ReasoningNode, pm) -> dict:
    """id(node) -> product of leaf probabilities, in one post-order pass."""
    probs: dict = {}

    def walk(node):
        if node.is_leaf:
            p = pm[node.source.pos, node.source.symbol]
        else:
            p = 1.0
            for c in node.children:
                p *= walk(c)
        probs[id(node)] = p
        return p

    walk(rt)
    return probs


def _original_string(rt: ReasoningNode):
    leaves = sorted(_iter_leaves(rt), key=lambda n: n.source.pos)
    return tuple(n.source.symbol for n in leaves)


# ---------------------------------------------------------------------------
# Random walk and the multi-step sampler


@lru_cache(maxsize=64)
def _truncated_poisson_pmf(beta: float, lo: int, hi: int) -> np.ndarray:
    ks = np.arange(lo, hi + 1)
    logp = ks * math.log(beta) - beta - np.array([math.lgamma(k + 1) for k in ks])
    p = np.exp(logp)
    return p / p.sum()


@lru_cache(maxsize=64)
def _truncated_poisson_cdf(beta: float, lo: int, hi: int) -> np.ndarray:
    return np.cumsum(_truncated_poisson_pmf(beta, lo, hi))


def string_log_prob(z, pm) -> float:
    return float(np.log(pm[np.arange(len(z)), list(z)]).sum())


def random_walk_step(z, pm, beta: float, rng) -> tuple:
    """One MH random-walk step over same-category substitutions.

    Distance is Poisson(beta) truncated to [1, l]; each chosen position
    is replaced by a uniformly chosen different symbol of the same
    category, which keeps the proposal symmetric and the walk inside
    the grammar.  Acceptance ratio is the perception probability ratio.
    """
    z = tuple(z)
    l = len(z)
    cdf = _truncated_poisson_cdf(beta, 1, l)
    d = 1 + int(np.searchsorted(cdf, rng.random() * cdf[-1]))
    positions = rng.permutation(l)[:d]
    proposal = list(z)
    log_ratio = 0.0
    for pos in positions:
        cur = proposal[pos]
        pool = symbols.DIGITS if symbols.is_digit(cur) else symbols.OPERATORS
        alternatives = [s for s in pool if s != cur]
        new = alternatives[int(rng.integers(len(alternatives)))]
        proposal[pos] = new
        log_ratio += math.log(max(pm[pos, new], _PROB_FLOOR)) - math.log(
            max(pm[pos, cur], _PROB_FLOOR)
        )
    accept = log_ratio >= 0 or rng.random() <= math.exp(log_ratio)
    return tuple(proposal) if accept else z


def proposal_log_prob(z_from, z_to, beta: float) -> float:
    """log g(z_to | z_from) under the random-walk proposal; used to check
    the proposal is symmetric (it cancels in the acceptance ratio)."""
    z_from, z_to = tuple(z_from), tuple(z_to)
    l = len(z_from)
    diff = [i for i in range(l) if z_from[i] != z_to[i]]
    d = len(diff)
    if d < 1 or d > l:
        return -math.inf
    for i in diff:
        if symbols.category(z_from[i]) != symbols.category(z_to[i]):
            return -math.inf
    pmf = _truncated_poisson_pmf(beta, 1, l)
    logp = math.log(pmf[d - 1]) - math.log(math.comb(l, d))
    for i in diff:
        pool = symbols.DIGITS if symbols.is_digit(z_from[i]) else symbols.OPERATORS
        logp -= math.log(len(pool) - 1)
    return logp


class _StateCache:
    """Per-chain cache of parse/evaluate/1-BS results keyed by state."""

    def __init__(self, cnf, y, pm):
        self.cnf = cnf
        self.y = y
        self.pm = pm
        self._value: dict = {}
        self._bs: dict = {}

    def value(self, z):
        if z not in self._value:
            try:
                self._value[z] = execute_string(z)
            except (NotAFormula, DivisionByZero):
                self._value[z] = None
        return self._value[z]

    def reasoning(self, z):
        tree = parse_string(self.cnf, z)
        if tree is None:
            return None  # not in the language
        try:
            return evaluate(tree)
        except DivisionByZero:
            return None

    def satisfied(self, z) -> bool:
        return self.value(z) == self.y

    def correction(self, z):
        if z not in self._bs:
            rt = self.reasoning(z)
            self._bs[z] = (
                None if rt is None else one_step_backsearch(rt, self.y, self.pm)
            )
        return self._bs[z]


def multi_step_backsearch(z0, y, pm, cfg: MbsConfig, rng, cnf=None, trace=None):
    """Run the T-step back-search sampler from a grammar-valid start.

    Each step proposes the 1-step search with probability ``cfg.mix``
    (a found correction is always accepted; a state already executing
    to y is left unchanged) and the random walk otherwise.  Returns the
    final state.  ``trace``, if given, collects per-step records
    ``(step, kind, state, accepted, in_target_set)``.
    """
    if cnf is None:
        from .grammar import load_arithmetic_grammar
        from .parsing import cnf_for

        cnf = cnf_for(load_arithmetic_grammar())
    cache = _StateCache(cnf, y, pm)
    z = tuple(z0)
    for t in range(cfg.steps):
        u = rng.random()
        if u <= cfg.mix:
            if cache.satisfied(z):
                _trace(trace, t, "backsearch", z, True, True)
                continue
            z_star = cache.correction(z)
            if z_star is not None:
                z = z_star
                _trace(trace, t, "backsearch", z, True, cache.satisfied(z))
                continue
        z_new = random_walk_step(z, pm, cfg.walk_mean, rng)
        _trace(trace, t, "walk", z_new, z_new != z, cache.satisfied(z_new))
        z = z_new
    return z


def _trace(trace, step, kind, z, accepted, in_q):
    if trace is not None:
        trace.append((step, kind, z, accepted, in_q))
