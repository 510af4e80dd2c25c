"""Pure-Python max-product CYK chart kernel.

Reference implementation; the compiled Cython kernel in ``_cyk_c``
computes bit-identical charts.  Tie-breaking is fixed by iteration
order: lexical rules sorted by (terminal id, rule id), binary rules by
rule id, splits ascending, strictly-greater comparison.
"""
from __future__ import annotations

import numpy as np

BACKEND = "python"


def viterbi_chart(logpm, n_nt, lex_lhs, lex_term, bin_lhs, bin_b, bin_c):
    """Fill the max-product chart for a length-l probability matrix.

    Returns (score, bp_rule, bp_split), each of shape (l, l+1, n_nt).
    ``bp_rule`` indexes into the lexical arrays for span-1 cells and
    into the binary arrays otherwise; -1 marks an unreachable cell.
    """
    l = logpm.shape[0]
    neg_inf = -np.inf
    score = np.full((l, l + 1, n_nt), neg_inf)
    bp_rule = np.full((l, l + 1, n_nt), -1, dtype=np.int32)
    bp_split = np.full((l, l + 1, n_nt), -1, dtype=np.int32)

    n_lex = len(lex_lhs)
    n_bin = len(bin_lhs)
    for i in range(l):
        row = logpm[i]
        for r in range(n_lex):
            s = row[lex_term[r]]
            a = lex_lhs[r]
            if s > score[i, i + 1, a]:
                score[i, i + 1, a] = s
                bp_rule[i, i + 1, a] = r

    for span in range(2, l + 1):
        for start in range(l - span + 1):
            end = start + span
            for split in range(start + 1, end):
                for r in range(n_bin):
                    sb = score[start, split, bin_b[r]]
                    if sb == neg_inf:
                        continue
                    sc = score[split, end, bin_c[r]]
                    if sc == neg_inf:
                        continue
                    s = sb + sc
                    a = bin_lhs[r]
                    if s > score[start, end, a]:
                        score[start, end, a] = s
                        bp_rule[start, end, a] = r
                        bp_split[start, end, a] = split
    return score, bp_rule, bp_split
