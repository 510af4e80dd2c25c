"""Shared test infrastructure: the acceptance-criterion reporter."""
import pytest

_results = []


@pytest.fixture
def criterion():
    """Record one acceptance-criterion verdict and assert it.

    The verdict line is echoed in the terminal summary so every run
    shows one PASS/FAIL line per criterion.
    """

    def record(num, desc, ok, detail):
        _results.append((num, desc, bool(ok), detail))
        assert ok, f"criterion {num} ({desc}): {detail}"

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for num, desc, ok, detail in sorted(_results):
        verdict = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"CRITERION {num:>2} [{verdict}] {desc}: {detail}")
