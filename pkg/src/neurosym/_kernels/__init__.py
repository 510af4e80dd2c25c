"""Kernel selection: compiled CYK chart if available, pure Python otherwise.

Set NEUROSYM_PURE=1 to force the Python kernel (used by the benchmark
and the kernel-equivalence tests).
"""
import os

from . import _cyk_py

if os.environ.get("NEUROSYM_PURE"):
    _impl = _cyk_py
else:
    try:
        from . import _cyk_c as _impl
    except ImportError:
        _impl = _cyk_py

BACKEND = _impl.BACKEND
viterbi_chart = _impl.viterbi_chart


def implementations():
    """All available kernel implementations, for benchmarks and tests."""
    impls = {"python": _cyk_py}
    try:
        from . import _cyk_c

        impls["cython"] = _cyk_c
    except ImportError:
        pass
    return impls
