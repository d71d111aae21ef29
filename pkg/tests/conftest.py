from __future__ import annotations

import pytest

_results: dict[str, str] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    if report.when == "call" or report.failed:
        if report.failed:
            _results[name] = "FAIL"
        else:
            _results.setdefault(name, "PASS" if report.passed else "SKIP")


def pytest_terminal_summary(terminalreporter):
    if not _results:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in _results.items():
        terminalreporter.write_line(f"[{status}] {name}")
