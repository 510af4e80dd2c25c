# Compiled max-product CYK chart kernel.  Must stay bit-identical to
# the pure-Python reference in _cyk_py (same iteration order, same
# strictly-greater tie-breaking).
import numpy as np

cimport numpy as cnp

cnp.import_array()

BACKEND = "cython"


def viterbi_chart(double[:, ::1] logpm, int n_nt,
                  int[::1] lex_lhs, int[::1] lex_term,
                  int[::1] bin_lhs, int[::1] bin_b, int[::1] bin_c):
    cdef int l = logpm.shape[0]
    cdef double neg_inf = -np.inf
    score_arr = np.full((l, l + 1, n_nt), neg_inf)
    bp_rule_arr = np.full((l, l + 1, n_nt), -1, dtype=np.int32)
    bp_split_arr = np.full((l, l + 1, n_nt), -1, dtype=np.int32)
    cdef double[:, :, ::1] score = score_arr
    cdef int[:, :, ::1] bp_rule = bp_rule_arr
    cdef int[:, :, ::1] bp_split = bp_split_arr

    cdef int n_lex = lex_lhs.shape[0]
    cdef int n_bin = bin_lhs.shape[0]
    cdef int i, r, a, span, start, end, split
    cdef double s, sb, sc

    for i in range(l):
        for r in range(n_lex):
            s = logpm[i, lex_term[r]]
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
    return score_arr, bp_rule_arr, bp_split_arr
