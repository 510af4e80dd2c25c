"""Back-search: priority math, the one-step search against a brute-force
single-edit oracle, the random walk, and the multi-step sampler."""
import math
from fractions import Fraction

import numpy as np
import pytest

from neurosym import symbols
from neurosym.backsearch import (
    MbsConfig,
    multi_step_backsearch,
    one_step_backsearch,
    priority,
    proposal_log_prob,
    random_walk_step,
    solve,
    string_log_prob,
)
from neurosym.grammar import load_arithmetic_grammar
from neurosym.parsing import cnf_for, parse_string
from neurosym.reasoning import (
    DivisionByZero,
    NotAFormula,
    evaluate,
    execute_string,
)
from neurosym.symbols import from_string, to_string

CNF = cnf_for(load_arithmetic_grammar())


def reasoning(text):
    return evaluate(parse_string(CNF, from_string(text)))


def uniform_pm(l):
    return np.ones((l, 14)) / 14


def value_of(z):
    try:
        return execute_string(z)
    except (NotAFormula, DivisionByZero):
        return None


def single_edit_fixes(z, y):
    """Oracle: all Hamming-1 same-length strings executing to y."""
    out = []
    for pos in range(len(z)):
        for s in range(14):
            if s == z[pos]:
                continue
            cand = z[:pos] + (s,) + z[pos + 1 :]
            if value_of(cand) == y:
                out.append(cand)
    return out


def fix_priority(z, fix, pm):
    (pos,) = [i for i in range(len(z)) if z[i] != fix[i]]
    return pm[pos, fix[pos]] / pm[pos, z[pos]]


# ---------------------------------------------------------------------------
# priority


def test_priority_terminal_ratio():
    rt = reasoning("3")
    pm = uniform_pm(1)
    pm[0] = 0.0
    pm[0, 3] = 0.5
    pm[0, 2] = 0.25
    pm[0, 0] = 0.25
    leaf = rt.children[0].children[0].children[0] if rt.children else rt
    # walk to the digit leaf
    node = rt
    while not node.is_leaf:
        node = node.children[0]
    assert priority(node, 2, pm) == pytest.approx(0.5)


def test_priority_nonterminal_ratio():
    rt = reasoning("3*4")
    pm = uniform_pm(3)
    pm[0] = 0.0
    pm[0, 3] = 0.9
    pm[1] = 0.0
    pm[1, symbols.MUL] = 1.0
    pm[2] = 0.0
    pm[2, 4] = 0.8
    # subtree covering all three leaves has p = 0.9 * 1.0 * 0.8 = 0.72
    assert priority(rt, Fraction(8), pm) == pytest.approx((1 - 0.72) / 0.72)


def test_priority_uniform_terminal_substitution_is_one():
    rt = reasoning("7")
    node = rt
    while not node.is_leaf:
        node = node.children[0]
    assert priority(node, 4, uniform_pm(1)) == pytest.approx(1.0)


# ---------------------------------------------------------------------------
# solve


def binary_node(text):
    """The topmost 3-child node of the reasoning tree."""
    node = reasoning(text)
    while len(node.children) == 1:
        node = node.children[0]
    return node


def test_solve_left_operand_of_product():
    parent = binary_node("3*4")
    left = parent.children[0]
    got = solve(left, parent, Fraction(8))
    assert [(c is left, want) for c, want in got] == [(True, Fraction(2))]


def test_solve_operator_no_candidate():
    parent = binary_node("2+6")
    op_leaf = parent.children[1]
    got = solve(op_leaf, parent, Fraction(12))
    assert [want for _, want in got] == [symbols.MUL]  # 2*6=12
    got_none = solve(op_leaf, parent, Fraction(100))
    assert got_none == []


def test_solve_unit_copies_value_down():
    rt = reasoning("5")
    child = rt.children[0]
    got = solve(child, rt, Fraction(7))
    assert [(c is child, want) for c, want in got] == [(True, Fraction(7))]


def test_solve_discards_non_digit_targets():
    parent = binary_node("3*4")
    left = parent.children[0]
    # digit leaf below: 3*4 -> want 10/4 (not an integer) must vanish at leaf
    cands = solve(left, parent, Fraction(10))
    # the Term child accepts the fractional expected value; the digit leaf
    # below must reject it
    digit = cands[0][0]
    while not digit.is_leaf:
        got = solve(digit.children[0], digit, cands[0][1])
        if not got:
            return
        digit = got[0][0]
    pytest.fail("fractional target survived to a digit leaf")


def test_solve_division_edge_cases():
    parent = binary_node("8/4")
    right = parent.children[2]
    assert solve(right, parent, Fraction(0)) == []  # 8/x = 0 impossible
    got = solve(right, parent, Fraction(4))
    assert [want for _, want in got] == [Fraction(2)]


# ---------------------------------------------------------------------------
# one-step back-search


def test_worked_example_digit_fix():
    rt = reasoning("2+3*4")
    assert one_step_backsearch(rt, Fraction(10), uniform_pm(5)) == from_string("2+2*4")


def test_not_found_when_no_single_edit_fix():
    rt = reasoning("1+1")
    assert one_step_backsearch(rt, Fraction(100), uniform_pm(3)) is None


def test_priority_breaks_ties_between_fixes():
    # 1+1 = 2, want 3: fixes are 2+1 and 1+2; pm decides
    rt = reasoning("1+1")
    pm = uniform_pm(3)
    pm[0, 2] = 0.9
    pm[0] /= pm[0].sum()
    assert one_step_backsearch(rt, Fraction(3), pm) == from_string("2+1")
    pm = uniform_pm(3)
    pm[2, 2] = 0.9
    pm[2] /= pm[2].sum()
    assert one_step_backsearch(rt, Fraction(3), pm) == from_string("1+2")


@pytest.mark.parametrize("length", [3, 5, 7])
def test_soundness_completeness_optimality(length):
    rng = np.random.default_rng(length)
    g = load_arithmetic_grammar()
    for _ in range(120):
        z = tuple(
            int(rng.choice(symbols.DIGITS)) if i % 2 == 0
            else int(rng.choice(symbols.OPERATORS))
            for i in range(length)
        )
        if value_of(z) is None:
            continue
        rt = evaluate(parse_string(CNF, z))
        y = Fraction(int(rng.integers(-10, 30)))
        if value_of(z) == y:
            continue
        pm = rng.dirichlet(np.ones(14), size=length)
        got = one_step_backsearch(rt, y, pm)
        fixes = single_edit_fixes(z, y)
        if got is None:
            assert fixes == [], (to_string(z), y)
        else:
            assert sum(a != b for a, b in zip(got, z)) == 1
            assert value_of(got) == y
            best = max(fix_priority(z, f, pm) for f in fixes)
            assert fix_priority(z, got, pm) == pytest.approx(best, rel=1e-12)


# ---------------------------------------------------------------------------
# random walk


def test_random_walk_preserves_categories_and_length():
    rng = np.random.default_rng(1)
    z = from_string("2+3*4/5")
    pm = uniform_pm(7)
    for _ in range(200):
        z2 = random_walk_step(z, pm, 1.0, rng)
        assert len(z2) == len(z)
        for a, b in zip(z, z2):
            assert symbols.category(a) == symbols.category(b)
        z = z2


def test_random_walk_proposal_is_symmetric():
    rng = np.random.default_rng(2)
    z = from_string("2+3*4")
    for _ in range(50):
        z2 = random_walk_step(z, uniform_pm(5), 1.0, rng)
        if z2 != z:
            fwd = proposal_log_prob(z, z2, 1.0)
            back = proposal_log_prob(z2, z, 1.0)
            assert fwd == pytest.approx(back, abs=1e-12)


def test_random_walk_accepts_uphill_always():
    rng = np.random.default_rng(3)
    z = from_string("1")
    pm = np.full((1, 14), 1e-9)
    pm[0, 5] = 1.0
    pm /= pm.sum(axis=1, keepdims=True)
    # any proposal that lands on 5 is uphill and must be accepted
    for _ in range(100):
        z2 = random_walk_step(z, pm, 1.0, rng)
        if z2 == (5,):
            return
        z = z2
    pytest.fail("never moved to the dominant symbol")


def test_random_walk_acceptance_ratio_is_pm_ratio():
    # statistical check on l=1: stationary distribution of digit flips
    rng = np.random.default_rng(4)
    pm = np.zeros((1, 14))
    pm[0, :10] = np.random.default_rng(0).dirichlet(np.ones(10))
    z = (0,)
    counts = np.zeros(10)
    for _ in range(40000):
        z = random_walk_step(z, pm, 1.0, rng)
        counts[z[0]] += 1
    freq = counts / counts.sum()
    assert np.abs(freq - pm[0, :10]).max() < 0.02


# ---------------------------------------------------------------------------
# multi-step sampler


def test_mbs_config_validation():
    with pytest.raises(ValueError):
        MbsConfig(mix=0.0)
    with pytest.raises(ValueError):
        MbsConfig(steps=0)
    with pytest.raises(ValueError):
        MbsConfig(walk_mean=0.0)


def test_mbs_single_step_equals_one_step_search():
    rng = np.random.default_rng(5)
    z = from_string("2+3*4")
    pm = uniform_pm(5)
    # mix ~ 1 forces the 1-BS branch on the only step
    cfg = MbsConfig(steps=1, mix=1 - 1e-12)
    assert multi_step_backsearch(z, Fraction(10), pm, cfg, rng) == from_string("2+2*4")


def test_mbs_satisfied_state_is_absorbing_under_backsearch_branch():
    rng = np.random.default_rng(6)
    z = from_string("2+2*4")  # already executes to 10
    pm = uniform_pm(5)
    cfg = MbsConfig(steps=20, mix=1 - 1e-12)
    trace = []
    out = multi_step_backsearch(z, Fraction(10), pm, cfg, rng, trace=trace)
    assert out == z
    assert all(state == z for _, _, state, _, _ in trace)


def test_mbs_mostly_in_target_set_with_reachable_correction():
    # pm concentrated on the corrected string: once found, downhill walk
    # moves are almost always rejected, so the chain stays in the target set
    rng = np.random.default_rng(7)
    z0 = from_string("2+3*4")
    pm = np.full((5, 14), 1e-4)
    for i, s in enumerate(from_string("2+2*4")):
        pm[i, s] = 1.0
    pm /= pm.sum(axis=1, keepdims=True)
    cfg = MbsConfig(steps=200, mix=0.5)
    trace = []
    multi_step_backsearch(z0, Fraction(10), pm, cfg, rng, trace=trace)
    tail = trace[20:]
    in_q = sum(1 for *_, ok in tail if ok)
    assert in_q / len(tail) >= 0.9


def test_mbs_trace_shape():
    rng = np.random.default_rng(8)
    trace = []
    cfg = MbsConfig(steps=10)
    multi_step_backsearch(
        from_string("1+1"), Fraction(5), uniform_pm(3), cfg, rng, trace=trace
    )
    assert len(trace) == 10
    for step, kind, state, accepted, in_q in trace:
        assert kind in ("backsearch", "walk")
        assert isinstance(accepted, bool) or accepted in (True, False)
        assert len(state) == 3


def test_string_log_prob():
    pm = uniform_pm(3)
    assert string_log_prob(from_string("1+1"), pm) == pytest.approx(3 * math.log(1 / 14))
