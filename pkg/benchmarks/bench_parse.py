"""Benchmark the compiled CYK chart kernel against the pure-Python one.

Both kernels must produce bit-identical charts; the script asserts that
on every timed input before reporting the speedup.

Usage: python benchmarks/bench_parse.py [--lengths 1,3,5,7] [--repeat 50]
"""
import argparse
import time

import numpy as np

from neurosym._kernels import implementations
from neurosym.grammar import load_arithmetic_grammar
from neurosym.parsing import cnf_for


def chart_inputs(lengths, repeat, rng):
    tabs = cnf_for(load_arithmetic_grammar()).tables()
    fixed = (
        tabs["n_nt"], tabs["lex_lhs"], tabs["lex_term"],
        tabs["bin_lhs"], tabs["bin_b"], tabs["bin_c"],
    )
    out = {}
    for l in lengths:
        pms = rng.dirichlet(np.ones(14), size=(repeat, l))
        with np.errstate(divide="ignore"):
            out[l] = [(np.log(pm),) + fixed for pm in pms]
    return out


def time_kernel(fn, inputs):
    start = time.perf_counter()
    charts = [fn(*args) for args in inputs]
    return time.perf_counter() - start, charts


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--lengths", default="1,3,5,7")
    ap.add_argument("--repeat", type=int, default=200)
    args = ap.parse_args()
    lengths = [int(s) for s in args.lengths.split(",")]

    impls = implementations()
    if "cython" not in impls:
        print("compiled kernel unavailable; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    inputs = chart_inputs(lengths, args.repeat, rng)
    print(f"{'length':>6}  {'python':>10}  {'cython':>10}  {'speedup':>8}")
    for l in lengths:
        t_py, charts_py = time_kernel(impls["python"].viterbi_chart, inputs[l])
        t_cy, charts_cy = time_kernel(impls["cython"].viterbi_chart, inputs[l])
        for a, b in zip(charts_py, charts_cy):
            for x, y in zip(a, b):
                assert np.array_equal(x, y), "kernel outputs diverged"
        per_py = t_py / args.repeat * 1e6
        per_cy = t_cy / args.repeat * 1e6
        print(f"{l:>6}  {per_py:>8.1f}us  {per_cy:>8.1f}us  {per_py / per_cy:>7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
