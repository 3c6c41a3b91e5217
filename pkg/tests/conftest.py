"""Shared fixtures and the acceptance-criteria summary printer."""

import pytest

_CRITERIA = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
        _CRITERIA[number] = (title, report.outcome == "passed", detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        title, ok, detail = _CRITERIA[number]
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
