from __future__ import annotations

import pytest

_RESULTS: dict[str, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    label = marker.args[0]
    if report.when == "call" or report.failed:
        status = "PASS" if report.passed else "FAIL"
        previous = _RESULTS.get(label, ("PASS", ""))[0]
        _RESULTS[label] = ("FAIL" if "FAIL" in (previous, status) else "PASS", item.name)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label in sorted(_RESULTS):
        status, _ = _RESULTS[label]
        terminalreporter.write_line(f"{status}  {label}")
