import sys
import warnings

import numpy as np
import pytest

import dojo  # noqa: F401  (enables 64-bit jax)

warnings.filterwarnings("ignore", category=RuntimeWarning)

_UNIT_FAILURES = []
_UNIT_RUN = [0]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if "test_acceptance" in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _UNIT_RUN[0] += report.when == "call"
        if report.outcome == "failed":
            _UNIT_FAILURES.append(report.nodeid)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = list(getattr(mod, "RESULTS", {}).items()) if mod else []
    if _UNIT_RUN[0]:
        ok = not _UNIT_FAILURES
        detail = f"{_UNIT_RUN[0]} unit tests, {len(_UNIT_FAILURES)} failed"
        if _UNIT_FAILURES:
            detail += ": " + ", ".join(n.split("::")[-1] for n in _UNIT_FAILURES)
        lines.append((9, f"{'PASS' if ok else 'FAIL'} criterion 9 (unit suite): {detail}"))
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(lines, key=lambda kv: kv[0]):
        terminalreporter.write_line(line)
