"""Collects one PASS/FAIL line per acceptance criterion and prints them after the run.

Tests opt in with ``@pytest.mark.criterion(n)`` and may attach measured
values through the ``measured`` fixture. A criterion passes only when every
test carrying its number passes.
"""

from __future__ import annotations

import pytest

_RESULTS: dict[int, list[tuple[str, bool, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


@pytest.fixture
def measured(request):
    """``measured("CD", value)`` attaches a ``name=value`` note to the criterion line."""
    def note(name, value):
        text = f"{value:.4g}" if isinstance(value, float) else str(value)
        request.node.user_properties.append((name, text))
    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    notes = " ".join(f"{k}={v}" for k, v in item.user_properties)
    _RESULTS.setdefault(mark.args[0], []).append((item.name, report.passed, notes))


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_RESULTS):
        rows = _RESULTS[n]
        ok = all(passed for _, passed, _ in rows)
        detail = "; ".join(f"{name}: {notes}" if notes else name for name, _, notes in rows)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
